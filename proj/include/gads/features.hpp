#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gads/random.hpp"

namespace gads {

/// Feature container layout (little-endian):
///   "GADSFT01" | u32 version | u32 d_cls | u32 d_patch | u32 h | u32 w |
///   u32 n_layers | n_layers x u32 layer index | u64 record_count
/// then per record:
///   u16 id_len + id | u16 class_len + class | u8 label | u8 has_mask |
///   u32 h_img | u32 w_img | [ceil(h_img*w_img/8) mask bytes, MSB-first] |
///   d_cls f32 | n_layers x (h*w*d_patch) f32, channel-last.
inline constexpr char kFeatureMagic[8] = {'G', 'A', 'D', 'S', 'F', 'T', '0', '1'};
inline constexpr std::uint32_t kFeatureVersion = 1;

/// Text prototype file: "GADSTP01" | u32 d_text | d_text f32 normal | d_text f32 abnormal.
inline constexpr char kPrototypeMagic[8] = {'G', 'A', 'D', 'S', 'T', 'P', '0', '1'};

/// Patch embeddings of one transformer layer, shape (h, w, d), channel-last.
struct PatchGrid {
  std::uint32_t h = 0;
  std::uint32_t w = 0;
  std::uint32_t d = 0;
  std::vector<float> values;

  std::span<const float> cell(std::size_t i, std::size_t j) const {
    return std::span<const float>(values).subspan((i * w + j) * d, d);
  }
  std::size_t cells() const { return static_cast<std::size_t>(h) * w; }

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

struct ImageDims {
  std::uint32_t h = 0;
  std::uint32_t w = 0;
  std::size_t pixels() const { return static_cast<std::size_t>(h) * w; }
  friend bool operator==(const ImageDims&, const ImageDims&) = default;
};

struct FeatureRecord {
  std::string id;
  std::string class_name;
  std::uint8_t label = 0;  // 0 normal, 1 abnormal
  ImageDims image_dims;
  std::optional<std::vector<std::uint8_t>> mask;  // h_img * w_img values in {0,1}, row-major
  std::vector<float> class_embed;
  std::map<std::uint32_t, PatchGrid> patch_grids;

  bool is_normal() const { return label == 0; }
  const PatchGrid& grid(std::uint32_t layer) const;

  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

struct FeatureDims {
  std::uint32_t d_cls = 0;
  std::uint32_t d_patch = 0;
  std::uint32_t h = 0;
  std::uint32_t w = 0;
  friend bool operator==(const FeatureDims&, const FeatureDims&) = default;
};

struct FeatureSet {
  std::vector<FeatureRecord> records;
  std::vector<std::uint32_t> layer_set;  // sorted
  FeatureDims dims;

  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;
};

struct PromptBank {
  std::vector<FeatureRecord> prompts;

  std::size_t k() const { return prompts.size(); }
};

struct TextPrototypes {
  std::vector<float> normal;
  std::vector<float> abnormal;

  std::size_t d_text() const { return normal.size(); }
  friend bool operator==(const TextPrototypes&, const TextPrototypes&) = default;
};

/// Throws ValidationError on the first violated record invariant.
void validate_record(const FeatureRecord& record, const std::vector<std::uint32_t>& layer_set,
                     const FeatureDims& dims);
void validate(const FeatureSet& set);
void validate(const TextPrototypes& protos);

FeatureSet read_feature_file(const std::filesystem::path& path);
void write_feature_file(const FeatureSet& set, const std::filesystem::path& path);

/// Byte size of one record under the container layout.
std::uint64_t encoded_record_size(const FeatureRecord& record, const FeatureDims& dims,
                                  std::size_t n_layers);

TextPrototypes read_prototype_file(const std::filesystem::path& path);
void write_prototype_file(const TextPrototypes& protos, const std::filesystem::path& path);

/// K distinct normal records chosen by selection sampling over file order.
/// The result keeps file order, and depends only on (set order, K, seed).
PromptBank sample_prompts(const FeatureSet& set, std::size_t k, std::uint64_t seed);

/// One bank per class name, each sampled from that class's normals.
std::map<std::string, PromptBank> sample_prompts_by_class(const FeatureSet& set, std::size_t k,
                                                          std::uint64_t seed);

/// Bank made of explicitly named records (must all be normal).
PromptBank prompts_from_ids(const FeatureSet& set, std::span<const std::string> ids);

/// Selection sampling (Knuth's Algorithm S): k indices out of [0, n), ascending.
/// Exposed for the training loop, which draws fresh banks each step.
std::vector<std::size_t> select_sorted(std::size_t n, std::size_t k, Rng& rng);

std::vector<std::uint8_t> pack_mask(std::span<const std::uint8_t> mask);
std::vector<std::uint8_t> unpack_mask(std::span<const std::uint8_t> packed, std::size_t n);

}  // namespace gads
