#include "gads/features.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "gads/binary_io.hpp"
#include "gads/error.hpp"

namespace gads {

namespace {

bool all_finite(std::span<const float> values) {
  return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::size_t> normal_indices(const FeatureSet& set, const std::string* class_name) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    const auto& r = set.records[i];
    if (r.is_normal() && (class_name == nullptr || r.class_name == *class_name)) out.push_back(i);
  }
  return out;
}

PromptBank draw_bank(const FeatureSet& set, const std::vector<std::size_t>& pool, std::size_t k,
                     std::uint64_t seed, const std::string& scope) {
  if (k == 0) throw ArgumentError("prompt count K must be at least 1");
  if (pool.size() < k) {
    throw InsufficientNormalsError("need " + std::to_string(k) + " normal records" + scope + ", found " +
                                   std::to_string(pool.size()));
  }
  Rng rng(seed);
  PromptBank bank;
  for (std::size_t pick : select_sorted(pool.size(), k, rng)) bank.prompts.push_back(set.records[pool[pick]]);
  return bank;
}

}  // namespace

const PatchGrid& FeatureRecord::grid(std::uint32_t layer) const {
  auto it = patch_grids.find(layer);
  if (it == patch_grids.end()) {
    throw ArgumentError("record '" + id + "' has no patch grid for layer " + std::to_string(layer));
  }
  return it->second;
}

void validate_record(const FeatureRecord& record, const std::vector<std::uint32_t>& layer_set,
                     const FeatureDims& dims) {
  const std::string who = "record '" + record.id + "': ";
  if (record.label > 1) throw ValidationError(who + "label must be 0 or 1");
  if (record.image_dims.h == 0 || record.image_dims.w == 0) throw ValidationError(who + "image dims must be positive");
  if (record.class_embed.size() != dims.d_cls) throw ValidationError(who + "class embedding has wrong dimension");
  if (!all_finite(record.class_embed)) throw ValidationError(who + "non-finite value in class embedding");
  if (record.mask) {
    if (record.mask->size() != record.image_dims.pixels()) throw ValidationError(who + "mask shape differs from image dims");
    if (std::any_of(record.mask->begin(), record.mask->end(), [](std::uint8_t v) { return v > 1; })) {
      throw ValidationError(who + "mask values must be 0 or 1");
    }
  }
  if (record.patch_grids.size() != layer_set.size()) throw ValidationError(who + "layer keys differ from the layer set");
  for (std::uint32_t layer : layer_set) {
    auto it = record.patch_grids.find(layer);
    if (it == record.patch_grids.end()) throw ValidationError(who + "missing layer " + std::to_string(layer));
    const PatchGrid& g = it->second;
    if (g.h != dims.h || g.w != dims.w || g.d != dims.d_patch ||
        g.values.size() != static_cast<std::size_t>(dims.h) * dims.w * dims.d_patch) {
      throw ValidationError(who + "patch grid shape mismatch at layer " + std::to_string(layer));
    }
    if (!all_finite(g.values)) throw ValidationError(who + "non-finite value in layer " + std::to_string(layer));
  }
}

void validate(const FeatureSet& set) {
  if (!std::is_sorted(set.layer_set.begin(), set.layer_set.end()) ||
      std::adjacent_find(set.layer_set.begin(), set.layer_set.end()) != set.layer_set.end()) {
    throw ValidationError("layer set must be sorted and unique");
  }
  for (const auto& r : set.records) validate_record(r, set.layer_set, set.dims);
}

void validate(const TextPrototypes& protos) {
  if (protos.normal.empty() || protos.normal.size() != protos.abnormal.size()) {
    throw ValidationError("text prototypes must be nonempty and of equal dimension");
  }
  for (const auto* v : {&protos.normal, &protos.abnormal}) {
    if (!all_finite(*v)) throw ValidationError("non-finite value in text prototype");
    double sq = 0.0;
    for (float x : *v) sq += static_cast<double>(x) * x;
    if (!(sq > 0.0)) throw ValidationError("text prototype has zero norm");
  }
}

std::uint64_t encoded_record_size(const FeatureRecord& record, const FeatureDims& dims, std::size_t n_layers) {
  std::uint64_t n = 2 + record.id.size() + 2 + record.class_name.size() + 1 + 1 + 4 + 4;
  if (record.mask) n += (record.image_dims.pixels() + 7) / 8;
  n += 4ULL * dims.d_cls;
  n += 4ULL * n_layers * dims.h * dims.w * dims.d_patch;
  return n;
}

std::vector<std::uint8_t> pack_mask(std::span<const std::uint8_t> mask) {
  std::vector<std::uint8_t> packed((mask.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) packed[i / 8] |= static_cast<std::uint8_t>(0x80u >> (i % 8));
  }
  return packed;
}

std::vector<std::uint8_t> unpack_mask(std::span<const std::uint8_t> packed, std::size_t n) {
  std::vector<std::uint8_t> mask(n);
  for (std::size_t i = 0; i < n; ++i) mask[i] = (packed[i / 8] >> (7 - i % 8)) & 1u;
  return mask;
}

void write_feature_file(const FeatureSet& set, const std::filesystem::path& path) {
  validate(set);
  io::Writer out(path);
  out.bytes(kFeatureMagic, 8);
  out.put(kFeatureVersion);
  out.put(set.dims.d_cls);
  out.put(set.dims.d_patch);
  out.put(set.dims.h);
  out.put(set.dims.w);
  out.put(static_cast<std::uint32_t>(set.layer_set.size()));
  for (auto l : set.layer_set) out.put(l);
  out.put(static_cast<std::uint64_t>(set.records.size()));
  for (const auto& r : set.records) {
    out.put_string16(r.id);
    out.put_string16(r.class_name);
    out.put(r.label);
    out.put(static_cast<std::uint8_t>(r.mask ? 1 : 0));
    out.put(r.image_dims.h);
    out.put(r.image_dims.w);
    if (r.mask) {
      auto packed = pack_mask(*r.mask);
      out.bytes(packed.data(), packed.size());
    }
    out.put_f32s(r.class_embed);
    for (auto l : set.layer_set) out.put_f32s(r.patch_grids.at(l).values);
  }
  out.close();
}

FeatureSet read_feature_file(const std::filesystem::path& path) {
  io::Reader in(path);
  if (!in.match_magic(kFeatureMagic)) throw FormatError("not a feature container (bad magic): " + path.string());
  const auto version = in.get<std::uint32_t>();
  if (version != kFeatureVersion) throw FormatError("unsupported feature container version " + std::to_string(version));

  FeatureSet set;
  set.dims.d_cls = in.get<std::uint32_t>();
  set.dims.d_patch = in.get<std::uint32_t>();
  set.dims.h = in.get<std::uint32_t>();
  set.dims.w = in.get<std::uint32_t>();
  const auto n_layers = in.get<std::uint32_t>();
  if (static_cast<std::uint64_t>(n_layers) * 4 > in.remaining()) throw CorruptFileError("layer count exceeds file size");
  set.layer_set.resize(n_layers);
  for (auto& l : set.layer_set) l = in.get<std::uint32_t>();
  if (!std::is_sorted(set.layer_set.begin(), set.layer_set.end()) ||
      std::adjacent_find(set.layer_set.begin(), set.layer_set.end()) != set.layer_set.end()) {
    throw CorruptFileError("layer indices must be strictly increasing");
  }
  const auto count = in.get<std::uint64_t>();
  const std::size_t grid_len = static_cast<std::size_t>(set.dims.h) * set.dims.w * set.dims.d_patch;

  for (std::uint64_t n = 0; n < count; ++n) {
    FeatureRecord r;
    r.id = in.get_string16();
    r.class_name = in.get_string16();
    r.label = in.get<std::uint8_t>();
    const auto has_mask = in.get<std::uint8_t>();
    if (has_mask > 1) throw CorruptFileError("record '" + r.id + "': has_mask flag must be 0 or 1");
    r.image_dims.h = in.get<std::uint32_t>();
    r.image_dims.w = in.get<std::uint32_t>();
    if (has_mask) {
      const std::size_t n_pix = r.image_dims.pixels();
      r.mask = unpack_mask(in.bytes((n_pix + 7) / 8), n_pix);
    }
    in.get_f32s(r.class_embed, set.dims.d_cls);
    for (auto l : set.layer_set) {
      PatchGrid g{set.dims.h, set.dims.w, set.dims.d_patch, {}};
      in.get_f32s(g.values, grid_len);
      r.patch_grids.emplace(l, std::move(g));
    }
    validate_record(r, set.layer_set, set.dims);
    set.records.push_back(std::move(r));
  }
  if (in.remaining() != 0) throw CorruptFileError("trailing bytes after the last record in " + path.string());
  return set;
}

void write_prototype_file(const TextPrototypes& protos, const std::filesystem::path& path) {
  validate(protos);
  io::Writer out(path);
  out.bytes(kPrototypeMagic, 8);
  out.put(static_cast<std::uint32_t>(protos.d_text()));
  out.put_f32s(protos.normal);
  out.put_f32s(protos.abnormal);
  out.close();
}

TextPrototypes read_prototype_file(const std::filesystem::path& path) {
  io::Reader in(path);
  if (!in.match_magic(kPrototypeMagic)) throw FormatError("not a text prototype file (bad magic): " + path.string());
  const auto d = in.get<std::uint32_t>();
  TextPrototypes p;
  in.get_f32s(p.normal, d);
  in.get_f32s(p.abnormal, d);
  if (in.remaining() != 0) throw CorruptFileError("trailing bytes in " + path.string());
  validate(p);
  return p;
}

std::vector<std::size_t> select_sorted(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> picked;
  picked.reserve(k);
  std::size_t needed = k;
  for (std::size_t i = 0; i < n && needed > 0; ++i) {
    const std::size_t left = n - i;
    if (needed == left || rng.uniform() * static_cast<double>(left) < static_cast<double>(needed)) {
      picked.push_back(i);
      --needed;
    }
  }
  return picked;
}

PromptBank sample_prompts(const FeatureSet& set, std::size_t k, std::uint64_t seed) {
  return draw_bank(set, normal_indices(set, nullptr), k, seed, "");
}

std::map<std::string, PromptBank> sample_prompts_by_class(const FeatureSet& set, std::size_t k, std::uint64_t seed) {
  std::set<std::string> classes;
  for (const auto& r : set.records) classes.insert(r.class_name);
  std::map<std::string, PromptBank> banks;
  for (const auto& c : classes) {
    banks.emplace(c, draw_bank(set, normal_indices(set, &c), k, derive_seed(seed, fnv1a(c)), " of class '" + c + "'"));
  }
  return banks;
}

PromptBank prompts_from_ids(const FeatureSet& set, std::span<const std::string> ids) {
  if (ids.empty()) throw ArgumentError("prompt id list is empty");
  PromptBank bank;
  for (const auto& id : ids) {
    auto it = std::find_if(set.records.begin(), set.records.end(), [&](const FeatureRecord& r) { return r.id == id; });
    if (it == set.records.end()) throw ArgumentError("prompt id not found: " + id);
    if (!it->is_normal()) throw InsufficientNormalsError("prompt '" + id + "' is not a normal record");
    bank.prompts.push_back(*it);
  }
  return bank;
}

}  // namespace gads
