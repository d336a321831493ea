#pragma once

#include <string>

#include "gads/grid.hpp"

namespace gads {

/// Fused image score s(x) in [0, 1] and the final pixel map at image resolution.
struct AnomalyOutput {
  std::string id;
  double score = 0.0;
  Grid map;
};

}  // namespace gads
