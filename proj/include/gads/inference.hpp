#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "gads/features.hpp"
#include "gads/output.hpp"
#include "gads/residual.hpp"
#include "gads/semantic.hpp"
#include "gads/training.hpp"

namespace gads {

struct InferenceConfig {
  double alpha = 0.5;
  double beta = 0.75;
  double tau = 1.0;
  std::vector<std::uint32_t> layers;

  void validate() const;
};

/// Intermediate quantities of one forward pass.
struct InferenceDetail {
  double residual_score = 0.0;  // s_I
  double semantic_score = 0.0;  // s_q
  double peak_residual = 0.0;   // s_p
  ResidualMap residual;         // rescaled M_x
  SemanticMaps dasl;
  SemanticMaps oasl;
  Grid dasl_map;  // M_p (patch grid)
  Grid oasl_map;  // M_n (patch grid)
};

/// Scores one query against its prompt bank: fused image score and
/// (1 - beta) * U(M_p) + beta * U(M_n) at image resolution.
AnomalyOutput infer(const FeatureRecord& query, const PromptBank& bank, const AdapterParams& params,
                    const TextPrototypes& protos, const InferenceConfig& config, InferenceDetail* detail = nullptr);

/// Either one bank for every query or one bank per class name.
using BankSource = std::variant<PromptBank, std::map<std::string, PromptBank>>;

std::vector<AnomalyOutput> infer_all(const FeatureSet& queries, const BankSource& banks, const AdapterParams& params,
                                     const TextPrototypes& protos, const InferenceConfig& config);

}  // namespace gads
