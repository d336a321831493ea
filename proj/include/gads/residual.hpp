#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gads/features.hpp"
#include "gads/grid.hpp"

namespace gads {

/// Affine adapter psi(v) = weight * v + bias over class-token embeddings.
struct ImageAdapter {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;

  Eigen::VectorXd apply(const Eigen::VectorXd& v) const;
  Eigen::Index dim() const { return weight.rows(); }
};

/// Linear scorer over the image-level residual, squashed by the logistic.
struct ResidualHead {
  Eigen::VectorXd weight;
  double bias = 0.0;
};

/// Patch-level residual map. Raw values lie in [0, 2]; after rescale() in [0, 1].
struct ResidualMap {
  Grid values;
  bool rescaled = false;
};

struct PatchResidual {
  ResidualMap map;  // raw layer mean
  double peak = 0.0;  // max of the rescaled map
};

Eigen::VectorXd to_vector(std::span<const float> v);
double logistic(double z);

Eigen::VectorXd image_prototype(std::span<const FeatureRecord* const> bank, const ImageAdapter& psi);
Eigen::VectorXd image_prototype(const PromptBank& bank, const ImageAdapter& psi);

/// psi(f(query)) - proto.
Eigen::VectorXd image_residual(const FeatureRecord& query, const Eigen::VectorXd& proto, const ImageAdapter& psi);

double residual_score(const Eigen::VectorXd& residual, const ResidualHead& head);

/// Row-normalized patch matrix (h*w rows, d columns) of one record layer.
/// Zero-norm cells raise NormalizationError naming record, layer and cell.
Eigen::MatrixXd normalize_patches(const FeatureRecord& record, std::uint32_t layer);

/// Normalized patches for a set of layers, computed once and reused across
/// many nearest-neighbour searches.
struct NormalizedRecord {
  std::uint32_t h = 0;
  std::uint32_t w = 0;
  std::map<std::uint32_t, Eigen::MatrixXd> layers;
};

NormalizedRecord normalize_record(const FeatureRecord& record, std::span<const std::uint32_t> layers);

/// 1 - max cosine similarity of each query cell against every patch of every
/// prompt (exhaustive dense search).
ResidualMap nearest_residual(const Eigen::MatrixXd& query, std::span<const Eigen::MatrixXd* const> bank,
                             std::uint32_t h, std::uint32_t w);

ResidualMap patch_residual_map_layer(const FeatureRecord& query, const PromptBank& bank, std::uint32_t layer);

PatchResidual patch_residual_map(const FeatureRecord& query, const PromptBank& bank,
                                 std::span<const std::uint32_t> layers);
PatchResidual patch_residual_map(const NormalizedRecord& query, std::span<const NormalizedRecord* const> bank,
                                 std::span<const std::uint32_t> layers);

/// Halves a raw map into [0, 1]. Idempotent on already rescaled maps.
ResidualMap rescale(const ResidualMap& map);

}  // namespace gads
