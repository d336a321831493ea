#include "gads/dasl.hpp"

#include "gads/error.hpp"

namespace gads::dasl {

double semantic_score(std::span<const float> class_embed, const TextPrototypes& protos, double tau) {
  const PrototypeDirections dirs = normalized_prototypes(protos);
  if (static_cast<Eigen::Index>(class_embed.size()) != dirs.normal.size()) {
    throw ShapeError("class embedding dimension " + std::to_string(class_embed.size()) +
                     " differs from text dimension " + std::to_string(dirs.normal.size()));
  }
  Eigen::VectorXd g = to_vector(class_embed);
  const double norm = g.norm();
  if (!(norm > 0.0)) throw NormalizationError("class embedding has zero norm");
  g /= norm;
  return two_way_softmax(g.dot(dirs.abnormal), g.dot(dirs.normal), tau);
}

SemanticMaps semantic_maps(const FeatureRecord& query, const TextPrototypes& protos, const PatchTextAdapter& phi,
                           std::span<const std::uint32_t> layers, double tau, SemanticTrace* trace) {
  if (phi.branch != Branch::dasl) throw ConfigurationError("discriminative maps need an adapter tagged dasl");
  return adapter_semantic_maps(query, protos, phi, layers, tau, trace);
}

double fuse_image_score(double residual_score, double semantic_score, const ResidualMap& residual_map,
                        double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in [0, 1]");
  if (!residual_map.rescaled) throw ArgumentError("residual map must be rescaled before fusion");
  return (1.0 - alpha) * (residual_score + semantic_score) / 2.0 + alpha * residual_map.values.max();
}

Grid pixel_map(const ResidualMap& residual_map, const SemanticMaps& maps) {
  if (!residual_map.rescaled) throw ArgumentError("residual map must be rescaled before fusion");
  return average(residual_map.values, maps.abnormal);
}

}  // namespace gads::dasl
