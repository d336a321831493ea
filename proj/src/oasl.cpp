#include "gads/oasl.hpp"

#include "gads/error.hpp"

namespace gads::oasl {

SemanticMaps maps(const FeatureRecord& query, const TextPrototypes& protos, const PatchTextAdapter& phi,
                  std::span<const std::uint32_t> layers, double tau, SemanticTrace* trace) {
  if (phi.branch != Branch::oasl) throw ConfigurationError("one-class maps need an adapter tagged oasl");
  return adapter_semantic_maps(query, protos, phi, layers, tau, trace);
}

Grid pixel_map(const ResidualMap& residual_map, const SemanticMaps& maps) {
  if (!residual_map.rescaled) throw ArgumentError("residual map must be rescaled before fusion");
  return average(residual_map.values, maps.abnormal);
}

}  // namespace gads::oasl
