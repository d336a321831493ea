#include "gads/inference.hpp"

#include "gads/dasl.hpp"
#include "gads/error.hpp"
#include "gads/losses.hpp"
#include "gads/oasl.hpp"

namespace gads {

void InferenceConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in [0, 1]");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ArgumentError("beta must lie in [0, 1]");
  if (!(tau > 0.0)) throw ArgumentError("tau must be positive");
  if (layers.empty()) throw ArgumentError("layer set is empty");
}

AnomalyOutput infer(const FeatureRecord& query, const PromptBank& bank, const AdapterParams& params,
                    const TextPrototypes& protos, const InferenceConfig& config, InferenceDetail* detail) {
  config.validate();
  InferenceDetail d;
  const Eigen::VectorXd proto = image_prototype(bank, params.psi);
  d.residual_score = residual_score(image_residual(query, proto, params.psi), params.head);
  d.semantic_score = dasl::semantic_score(query.class_embed, protos, config.tau);
  const PatchResidual pr = patch_residual_map(query, bank, config.layers);
  d.residual = rescale(pr.map);
  d.peak_residual = pr.peak;
  d.dasl = dasl::semantic_maps(query, protos, params.phi1, config.layers, config.tau);
  d.oasl = oasl::maps(query, protos, params.phi2, config.layers, config.tau);
  d.dasl_map = dasl::pixel_map(d.residual, d.dasl);
  d.oasl_map = oasl::pixel_map(d.residual, d.oasl);

  AnomalyOutput out;
  out.id = query.id;
  out.score = dasl::fuse_image_score(d.residual_score, d.semantic_score, d.residual, config.alpha);
  const Upsampler up(d.dasl_map.rows, d.dasl_map.cols, query.image_dims.h, query.image_dims.w);
  const Grid up_p = up.forward(d.dasl_map);
  const Grid up_n = up.forward(d.oasl_map);
  out.map = Grid(up_p.rows, up_p.cols);
  for (std::size_t k = 0; k < out.map.size(); ++k) {
    out.map.values[k] = (1.0 - config.beta) * up_p.values[k] + config.beta * up_n.values[k];
  }
  if (detail) *detail = std::move(d);
  return out;
}

std::vector<AnomalyOutput> infer_all(const FeatureSet& queries, const BankSource& banks, const AdapterParams& params,
                                     const TextPrototypes& protos, const InferenceConfig& config) {
  std::vector<AnomalyOutput> outputs;
  outputs.reserve(queries.records.size());
  for (const auto& q : queries.records) {
    const PromptBank* bank = nullptr;
    if (const auto* single = std::get_if<PromptBank>(&banks)) {
      bank = single;
    } else {
      const auto& per_class = std::get<std::map<std::string, PromptBank>>(banks);
      auto it = per_class.find(q.class_name);
      if (it == per_class.end()) {
        throw InsufficientNormalsError("no prompt bank for class '" + q.class_name + "' (query '" + q.id + "')");
      }
      bank = &it->second;
    }
    outputs.push_back(infer(q, *bank, params, protos, config));
  }
  return outputs;
}

}  // namespace gads
