#pragma once

#include <cstdint>
#include <span>

#include "gads/features.hpp"
#include "gads/grid.hpp"
#include "gads/residual.hpp"
#include "gads/semantic.hpp"

namespace gads::oasl {

/// Same functional form as the discriminative maps, evaluated with the
/// one-class adapter. Throws ConfigurationError unless phi is tagged oasl.
SemanticMaps maps(const FeatureRecord& query, const TextPrototypes& protos, const PatchTextAdapter& phi,
                  std::span<const std::uint32_t> layers, double tau = 1.0, SemanticTrace* trace = nullptr);

Grid pixel_map(const ResidualMap& residual_map, const SemanticMaps& maps);

}  // namespace gads::oasl
