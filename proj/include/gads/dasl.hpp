#pragma once

#include <cstdint>
#include <span>

#include "gads/features.hpp"
#include "gads/grid.hpp"
#include "gads/residual.hpp"
#include "gads/semantic.hpp"

namespace gads::dasl {

/// Two-way softmax of the class token's cosine similarity to the abnormal
/// versus the normal prototype. Requires d_cls == d_text.
double semantic_score(std::span<const float> class_embed, const TextPrototypes& protos, double tau = 1.0);

/// Layer-averaged semantic maps through the discriminative adapter.
SemanticMaps semantic_maps(const FeatureRecord& query, const TextPrototypes& protos, const PatchTextAdapter& phi,
                           std::span<const std::uint32_t> layers, double tau = 1.0,
                           SemanticTrace* trace = nullptr);

/// (1 - alpha) * (s_I + s_q) / 2 + alpha * max(residual map).
double fuse_image_score(double residual_score, double semantic_score, const ResidualMap& residual_map,
                        double alpha);

/// Element-wise mean of the rescaled residual map and the abnormal semantic map.
Grid pixel_map(const ResidualMap& residual_map, const SemanticMaps& maps);

}  // namespace gads::dasl
