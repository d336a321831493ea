#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "gads/inference.hpp"
#include "gads/metrics.hpp"
#include "gads/synth.hpp"
#include "gads/training.hpp"

namespace gads::cli {

enum class MapFormat { pgm, png };
enum class BankScope { per_class, whole_set };

struct RunConfig {
  TrainConfig train;
  std::filesystem::path features;       // training features
  std::filesystem::path test_features;
  std::filesystem::path prompts;        // normal pool for inference banks (default: test features)
  std::filesystem::path protos;
  std::filesystem::path ckpt;
  std::filesystem::path out;
  std::vector<std::filesystem::path> predictions;  // eval inputs, one directory per run
  std::vector<std::string> prompt_ids;  // explicit bank; overrides seeded sampling
  std::size_t shots = 2;
  std::vector<std::uint64_t> seeds{0};
  MapFormat map_format = MapFormat::pgm;
  BankScope bank_scope = BankScope::per_class;
  SynthConfig synth;
};

InferenceConfig inference_config(const RunConfig& cfg, const FeatureSet& set);

/// Each command validates its paths first and throws gads::Error on failure.
void cmd_train(const RunConfig& cfg, std::ostream& log);
void cmd_infer(const RunConfig& cfg, std::ostream& log);
void cmd_eval(const RunConfig& cfg, std::ostream& log);
void cmd_synth(const RunConfig& cfg, std::ostream& log);

/// Output directory of one inference seed under `out`.
std::filesystem::path seed_dir(const std::filesystem::path& out, std::uint64_t seed);

/// "id,score" header, scores with 9 significant digits.
void write_scores_csv(const std::vector<AnomalyOutput>& outputs, const std::filesystem::path& path);

/// 8-bit grayscale, pixel = round(255 * clamp(value, 0, 1)).
std::vector<std::uint8_t> quantize_map(const Grid& map);
void write_pgm(const Grid& map, const std::filesystem::path& path);
void write_png(const Grid& map, const std::filesystem::path& path);

/// Full-precision predictions: "GADSPR01" | u32 version | u64 count | per
/// output: u16 id_len + id | f64 score | u32 rows | u32 cols | rows*cols f64.
void write_predictions(const std::vector<AnomalyOutput>& outputs, const std::filesystem::path& path);
std::vector<AnomalyOutput> read_predictions(const std::filesystem::path& path);

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t runs = 0;
};

/// mean/std of every metric present across runs, keyed "overall/<metric>",
/// "mean/<metric>" and "<dataset>/<metric>".
std::map<std::string, Aggregate> aggregate_reports(const std::vector<metrics::EvalReport>& reports);

std::string file_safe(const std::string& id);

}  // namespace gads::cli
