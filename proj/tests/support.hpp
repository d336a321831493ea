#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "gads/features.hpp"
#include "gads/random.hpp"
#include "gads/training.hpp"

namespace testing {

struct Shape {
  std::uint32_t d_cls = 8;
  std::uint32_t d_patch = 8;
  std::uint32_t h = 4;
  std::uint32_t w = 4;
  std::vector<std::uint32_t> layers{0, 1};
  std::uint32_t image = 8;
};

inline std::vector<float> random_floats(gads::Rng& rng, std::size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

inline gads::FeatureRecord random_record(gads::Rng& rng, const Shape& s, const std::string& id,
                                         const std::string& cls = "widget", std::uint8_t label = 0,
                                         bool with_mask = false) {
  gads::FeatureRecord r;
  r.id = id;
  r.class_name = cls;
  r.label = label;
  r.image_dims = {s.image, s.image};
  r.class_embed = random_floats(rng, s.d_cls);
  for (auto layer : s.layers) {
    r.patch_grids[layer] = gads::PatchGrid{s.h, s.w, s.d_patch, random_floats(rng, std::size_t{s.h} * s.w * s.d_patch)};
  }
  if (with_mask) {
    std::vector<std::uint8_t> mask(r.image_dims.pixels(), 0);
    if (label == 1) {
      // A random axis-aligned rectangle of ones.
      const auto top = rng.uniform_index(s.image / 2), left = rng.uniform_index(s.image / 2);
      for (std::size_t i = top; i < top + s.image / 2; ++i)
        for (std::size_t j = left; j < left + s.image / 2; ++j) mask[i * s.image + j] = 1;
    }
    r.mask = mask;
  }
  return r;
}

inline gads::FeatureSet random_set(gads::Rng& rng, const Shape& s, std::size_t n, bool masks = false) {
  gads::FeatureSet set;
  set.layer_set = s.layers;
  set.dims = {s.d_cls, s.d_patch, s.h, s.w};
  for (std::size_t k = 0; k < n; ++k) {
    const std::uint8_t label = k % 4 >= 2 ? 1 : 0;
    set.records.push_back(random_record(rng, s, "rec-" + std::to_string(k), k % 2 ? "b" : "a", label, masks));
  }
  return set;
}

inline gads::TextPrototypes random_protos(gads::Rng& rng, std::size_t d_text) {
  return {random_floats(rng, d_text), random_floats(rng, d_text)};
}

// Parameters away from the initialization so every gradient path is exercised.
inline gads::AdapterParams random_params(gads::Rng& rng, std::size_t d_cls, std::size_t d_patch, std::size_t d_text) {
  auto p = gads::init_params(d_cls, d_patch, d_text, rng.next_u64());
  auto fill = [&](auto& m, double scale) {
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = scale * rng.normal();
  };
  fill(p.psi.weight, 0.5);
  fill(p.psi.bias, 0.5);
  fill(p.head.weight, 0.5);
  p.head.bias = 0.3 * rng.normal();
  fill(p.phi1.weight, 0.5);
  fill(p.phi1.bias, 0.5);
  fill(p.phi2.weight, 0.5);
  fill(p.phi2.bias, 0.5);
  return p;
}

// Fresh scratch directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("gads-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::vector<char> slurp(const std::filesystem::path& p) {
  std::FILE* f = std::fopen(p.string().c_str(), "rb");
  std::vector<char> bytes;
  if (!f) return bytes;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) bytes.insert(bytes.end(), buf, buf + n);
  std::fclose(f);
  return bytes;
}

}  // namespace testing
