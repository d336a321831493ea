#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gads/features.hpp"
#include "gads/grid.hpp"
#include "gads/output.hpp"

namespace gads::metrics {

/// Mann-Whitney AUROC with half credit for ties.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Step-wise AP over descending unique thresholds, ties grouped.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Per-region overlap curve point.
struct ProPoint {
  double fpr = 0.0;
  double pro = 0.0;
};

/// Integral of mean per-region overlap over FPR in [0, fpr_limit], divided by
/// fpr_limit. Regions are 8-connected components of each mask. The curve
/// starts at (0, 0); points are joined by trapezoids and the last point at or
/// below the limit is held flat up to the limit.
double pro(std::span<const Grid> maps, std::span<const std::vector<std::uint8_t>> masks, double fpr_limit = 0.3);

/// The curve integrated by pro(): (0, 0) followed by one point per unique map value, descending.
std::vector<ProPoint> pro_curve(std::span<const Grid> maps, std::span<const std::vector<std::uint8_t>> masks);

double integrate_pro(std::span<const ProPoint> curve, double fpr_limit);

/// 8-connected component labels; 0 is background, regions are 1..n.
std::vector<int> label_regions(std::span<const std::uint8_t> mask, std::size_t rows, std::size_t cols, int* count);

struct MetricSet {
  std::optional<double> image_auroc;
  std::optional<double> image_ap;
  std::optional<double> pixel_auroc;
  std::optional<double> pixel_pro;
  std::size_t n_images = 0;
  std::size_t n_pixels = 0;
};

struct EvalReport {
  MetricSet overall;                             // pooled over every record
  MetricSet dataset_mean;                        // unweighted mean of the per-dataset values
  std::map<std::string, MetricSet> per_dataset;  // keyed by class name
};

/// Outputs and records are matched by id (order may differ; sets must agree).
EvalReport evaluate(std::span<const AnomalyOutput> outputs, std::span<const FeatureRecord> records);

nlohmann::json to_json(const MetricSet& m);
nlohmann::json to_json(const EvalReport& report);
std::string to_text(const EvalReport& report);

}  // namespace gads::metrics
