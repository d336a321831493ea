#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gads/error.hpp"

namespace gads {

/// Dense row-major 2-D grid of doubles (anomaly maps, semantic maps).
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }

  std::size_t size() const { return values.size(); }
  bool same_shape(const Grid& other) const { return rows == other.rows && cols == other.cols; }

  double max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }
  double min() const { return values.empty() ? 0.0 : *std::min_element(values.begin(), values.end()); }

  friend bool operator==(const Grid&, const Grid&) = default;
};

inline void require_same_shape(const Grid& a, const Grid& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": grid shapes differ (" + std::to_string(a.rows) + "x" +
                     std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                     std::to_string(b.cols) + ")");
  }
}

/// Element-wise 0.5 * (a + b).
inline Grid average(const Grid& a, const Grid& b) {
  require_same_shape(a, b, "average");
  Grid out(a.rows, a.cols);
  for (std::size_t k = 0; k < a.size(); ++k) out.values[k] = 0.5 * (a.values[k] + b.values[k]);
  return out;
}

}  // namespace gads
