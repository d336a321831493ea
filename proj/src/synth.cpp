#include "gads/synth.hpp"

#include <cmath>
#include <string>

#include "gads/error.hpp"
#include "gads/random.hpp"

namespace gads {

namespace {

struct ClassModel {
  std::string name;
  std::vector<double> token;
  std::vector<std::vector<double>> patterns;  // per layer, grid*grid*d_patch
};

std::vector<double> gaussian_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

std::vector<double> unit(std::vector<double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double n = std::sqrt(sq);
  for (auto& x : v) x /= n;
  return v;
}

std::string make_id(const char* split, std::size_t n) {
  std::string digits = std::to_string(n);
  return std::string(split) + "-" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits;
}

class Generator {
 public:
  Generator(const SynthConfig& cfg, std::vector<double> patch_dir, std::vector<double> token_dir)
      : cfg_(cfg), patch_dir_(std::move(patch_dir)), token_dir_(std::move(token_dir)) {
    Rng rng(derive_seed(cfg.seed, 0x636c6173));
    for (std::uint32_t c = 0; c < cfg.classes; ++c) {
      ClassModel m;
      m.name = "class" + std::to_string(c);
      m.token = gaussian_vector(rng, cfg.d_cls);
      for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
        m.patterns.push_back(gaussian_vector(rng, static_cast<std::size_t>(cfg.grid) * cfg.grid * cfg.d_patch));
      }
      classes_.push_back(std::move(m));
    }
  }

  FeatureSet make_set(const char* split, std::uint32_t normals, std::uint32_t abnormals, std::uint64_t stream,
                      bool with_masks) const {
    Rng rng(derive_seed(cfg_.seed, stream));
    FeatureSet set;
    set.layer_set = cfg_.layers;
    set.dims = FeatureDims{cfg_.d_cls, cfg_.d_patch, cfg_.grid, cfg_.grid};
    const std::uint32_t total = normals + abnormals;
    const std::uint32_t n_classes = cfg_.classes;
    for (std::uint32_t n = 0; n < total; ++n) {
      // Classes cycle record by record; within each class abnormal records
      // are spread evenly so every class receives its share.
      const std::uint32_t c = n % n_classes;
      const std::uint64_t m = n / n_classes;
      const std::uint64_t class_total = total / n_classes + (c < total % n_classes ? 1 : 0);
      const std::uint64_t class_abnormal = abnormals / n_classes + (c < abnormals % n_classes ? 1 : 0);
      const bool abnormal = class_abnormal > 0 && ((m + 1) * class_abnormal / class_total != m * class_abnormal / class_total);
      set.records.push_back(make_record(make_id(split, n), classes_[c], abnormal, with_masks, rng));
    }
    return set;
  }

 private:
  FeatureRecord make_record(std::string id, const ClassModel& cls, bool abnormal, bool with_mask, Rng& rng) const {
    FeatureRecord r;
    r.id = std::move(id);
    r.class_name = cls.name;
    r.label = abnormal ? 1 : 0;
    r.image_dims = ImageDims{cfg_.image, cfg_.image};

    const std::uint32_t span = cfg_.grid - cfg_.block + 1;
    const std::uint32_t top = abnormal ? static_cast<std::uint32_t>(rng.uniform_index(span)) : 0;
    const std::uint32_t left = abnormal ? static_cast<std::uint32_t>(rng.uniform_index(span)) : 0;
    const double pattern_norm = std::sqrt(static_cast<double>(cfg_.d_patch));
    const double token_norm = std::sqrt(static_cast<double>(cfg_.d_cls));
    const double area = static_cast<double>(cfg_.block * cfg_.block) / static_cast<double>(cfg_.grid * cfg_.grid);

    r.class_embed.resize(cfg_.d_cls);
    for (std::uint32_t k = 0; k < cfg_.d_cls; ++k) {
      double v = cls.token[k] + cfg_.class_noise * rng.normal();
      if (abnormal) v += cfg_.magnitude * area * token_norm * token_dir_[k];
      r.class_embed[k] = static_cast<float>(v);
    }
    for (std::size_t l = 0; l < cfg_.layers.size(); ++l) {
      PatchGrid g{cfg_.grid, cfg_.grid, cfg_.d_patch, {}};
      g.values.resize(static_cast<std::size_t>(cfg_.grid) * cfg_.grid * cfg_.d_patch);
      for (std::uint32_t i = 0; i < cfg_.grid; ++i) {
        for (std::uint32_t j = 0; j < cfg_.grid; ++j) {
          const bool planted = abnormal && i >= top && i < top + cfg_.block && j >= left && j < left + cfg_.block;
          for (std::uint32_t k = 0; k < cfg_.d_patch; ++k) {
            const std::size_t idx = (static_cast<std::size_t>(i) * cfg_.grid + j) * cfg_.d_patch + k;
            double v = cls.patterns[l][idx] + cfg_.patch_noise * rng.normal();
            if (planted) v += cfg_.magnitude * pattern_norm * patch_dir_[k];
            g.values[idx] = static_cast<float>(v);
          }
        }
      }
      r.patch_grids.emplace(cfg_.layers[l], std::move(g));
    }
    if (with_mask) {
      r.mask = abnormal ? block_mask(cfg_.grid, cfg_.image, top, left, cfg_.block)
                        : std::vector<std::uint8_t>(r.image_dims.pixels(), 0);
    }
    return r;
  }

  const SynthConfig& cfg_;
  std::vector<double> patch_dir_;
  std::vector<double> token_dir_;
  std::vector<ClassModel> classes_;
};

}  // namespace

void SynthConfig::validate() const {
  if (classes == 0) throw ArgumentError("synth: need at least one class");
  if (d_cls == 0 || d_patch == 0 || d_text == 0) throw ArgumentError("synth: dimensions must be positive");
  if (d_cls != d_text) throw ArgumentError("synth: d_cls must equal d_text");
  if (grid == 0 || block == 0 || block > grid) throw ArgumentError("synth: block must fit in the patch grid");
  if (image < grid) throw ArgumentError("synth: image must be at least as large as the patch grid");
  if (layers.empty()) throw ArgumentError("synth: layer set is empty");
  for (std::size_t i = 1; i < layers.size(); ++i)
    if (layers[i] <= layers[i - 1]) throw ArgumentError("synth: layers must be strictly increasing");
  if (!(magnitude >= 0.0) || !(patch_noise >= 0.0) || !(class_noise >= 0.0)) {
    throw ArgumentError("synth: magnitude and noise levels must be nonnegative");
  }
}

std::vector<std::uint8_t> block_mask(std::uint32_t grid, std::uint32_t image, std::uint32_t top, std::uint32_t left,
                                     std::uint32_t block) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(image) * image, 0);
  auto nearest = [&](std::uint32_t p) -> std::uint32_t {
    if (image == 1 || grid == 1) return 0;
    return static_cast<std::uint32_t>(std::lround(static_cast<double>(p) * (grid - 1) / (image - 1)));
  };
  for (std::uint32_t r = 0; r < image; ++r) {
    const auto pr = nearest(r);
    if (pr < top || pr >= top + block) continue;
    for (std::uint32_t c = 0; c < image; ++c) {
      const auto pc = nearest(c);
      if (pc >= left && pc < left + block) mask[static_cast<std::size_t>(r) * image + c] = 1;
    }
  }
  return mask;
}

SynthData generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng text_rng(derive_seed(cfg.seed, 0x74657874));
  SynthData data;
  const auto normal = gaussian_vector(text_rng, cfg.d_text);
  const auto abnormal = gaussian_vector(text_rng, cfg.d_text);
  for (double v : normal) data.protos.normal.push_back(static_cast<float>(v));
  for (double v : abnormal) data.protos.abnormal.push_back(static_cast<float>(v));

  // Planted anomalies point along the abnormal prototype when the spaces coincide.
  std::vector<double> patch_dir = cfg.d_patch == cfg.d_text ? unit(abnormal) : unit(gaussian_vector(text_rng, cfg.d_patch));
  std::vector<double> token_dir = unit(abnormal);

  const Generator gen(cfg, std::move(patch_dir), std::move(token_dir));
  data.train = gen.make_set("train", cfg.train_normals, cfg.train_abnormals, 0x747261696e, true);
  data.test = gen.make_set("test", cfg.test_normals, cfg.test_abnormals, 0x74657374, true);
  data.pool = gen.make_set("pool", cfg.pool_normals * cfg.classes, 0, 0x706f6f6c, false);
  return data;
}

}  // namespace gads
