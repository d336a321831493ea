#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "gads/features.hpp"
#include "gads/grid.hpp"

namespace gads {

enum class Branch : std::uint8_t { dasl, oasl };

const char* to_string(Branch b);

/// Linear patch-to-text projection; `branch` records which learner owns it.
struct PatchTextAdapter {
  Eigen::MatrixXd weight;  // d_text x d_patch
  Eigen::VectorXd bias;    // d_text
  Branch branch = Branch::dasl;
};

/// Normal/abnormal probability maps on the patch grid; normal + abnormal = 1.
struct SemanticMaps {
  Grid normal;
  Grid abnormal;
};

/// Unit-normalized prototypes as doubles, shared by every cell evaluation.
struct PrototypeDirections {
  Eigen::VectorXd normal;
  Eigen::VectorXd abnormal;
};

PrototypeDirections normalized_prototypes(const TextPrototypes& protos);

/// exp(a/tau) / (exp(a/tau) + exp(n/tau)), evaluated stably as a logistic.
double two_way_softmax(double cos_abnormal, double cos_normal, double tau);

/// Forward values kept per layer and cell for the adapter gradient.
struct SemanticTrace {
  struct Cell {
    Eigen::VectorXd unit;  // normalized projection
    double norm = 0.0;
    double abnormal = 0.0;  // per-layer abnormal probability
  };
  std::vector<std::uint32_t> layers;
  std::vector<std::vector<Cell>> cells;  // [layer][cell]
  Eigen::VectorXd direction;             // (abnormal - normal) / tau
};

/// Projects every patch through the adapter, normalizes, scores against both
/// prototypes and averages over layers. Shared by the DASL and OASL branches;
/// no ownership check is done here.
SemanticMaps adapter_semantic_maps(const FeatureRecord& query, const TextPrototypes& protos,
                                   const PatchTextAdapter& phi, std::span<const std::uint32_t> layers, double tau,
                                   SemanticTrace* trace = nullptr);

struct AdapterGradient {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

/// Accumulates d(loss)/d(adapter) given d(loss)/d(abnormal map). The normal
/// map is 1 - abnormal, so callers fold its gradient in with a minus sign.
void accumulate_adapter_gradient(const FeatureRecord& query, const SemanticTrace& trace, const Grid& grad_abnormal,
                                 AdapterGradient& grad);

}  // namespace gads
