#include "gads/semantic.hpp"

#include <algorithm>
#include <cmath>

#include "gads/error.hpp"
#include "gads/residual.hpp"

namespace gads {

const char* to_string(Branch b) { return b == Branch::dasl ? "dasl" : "oasl"; }

PrototypeDirections normalized_prototypes(const TextPrototypes& protos) {
  validate(protos);
  PrototypeDirections out{to_vector(protos.normal), to_vector(protos.abnormal)};
  out.normal.normalize();
  out.abnormal.normalize();
  return out;
}

double two_way_softmax(double cos_abnormal, double cos_normal, double tau) {
  if (!(tau > 0.0)) throw ArgumentError("temperature must be positive");
  return logistic((cos_abnormal - cos_normal) / tau);
}

SemanticMaps adapter_semantic_maps(const FeatureRecord& query, const TextPrototypes& protos,
                                   const PatchTextAdapter& phi, std::span<const std::uint32_t> layers, double tau,
                                   SemanticTrace* trace) {
  if (layers.empty()) throw ArgumentError("layer set is empty");
  if (!(tau > 0.0)) throw ArgumentError("temperature must be positive");
  const PrototypeDirections dirs = normalized_prototypes(protos);
  if (phi.weight.rows() != dirs.normal.size() || phi.bias.size() != phi.weight.rows()) {
    throw ShapeError("patch adapter output dimension does not match text prototypes");
  }

  std::vector<std::uint32_t> order(layers.begin(), layers.end());
  std::sort(order.begin(), order.end());
  order.erase(std::unique(order.begin(), order.end()), order.end());

  const PatchGrid& first = query.grid(order.front());
  Grid abnormal(first.h, first.w);
  const Eigen::VectorXd direction = (dirs.abnormal - dirs.normal) / tau;
  if (trace) {
    trace->layers = order;
    trace->cells.assign(order.size(), {});
    trace->direction = direction;
  }

  Eigen::VectorXd patch(phi.weight.cols());
  for (std::size_t li = 0; li < order.size(); ++li) {
    const PatchGrid& g = query.grid(order[li]);
    if (g.h != first.h || g.w != first.w) throw ShapeError("patch grids differ in shape across layers");
    if (static_cast<Eigen::Index>(g.d) != phi.weight.cols()) {
      throw ShapeError("patch dimension " + std::to_string(g.d) + " does not match adapter input " +
                       std::to_string(phi.weight.cols()));
    }
    if (trace) trace->cells[li].resize(g.cells());
    for (std::size_t c = 0; c < g.cells(); ++c) {
      const auto cell = g.values.data() + c * g.d;
      for (std::uint32_t k = 0; k < g.d; ++k) patch[k] = cell[k];
      Eigen::VectorXd z = phi.weight * patch + phi.bias;
      const double norm = z.norm();
      if (!(norm > 0.0)) {
        throw NormalizationError("zero-norm projected patch in record '" + query.id + "', layer " +
                                 std::to_string(order[li]) + ", cell (" + std::to_string(c / g.w) + ", " +
                                 std::to_string(c % g.w) + ")");
      }
      z /= norm;
      const double s = two_way_softmax(z.dot(dirs.abnormal), z.dot(dirs.normal), tau);
      abnormal.values[c] += s;
      if (trace) trace->cells[li][c] = SemanticTrace::Cell{std::move(z), norm, s};
    }
  }

  SemanticMaps maps{Grid(first.h, first.w), std::move(abnormal)};
  const double inv = 1.0 / static_cast<double>(order.size());
  for (std::size_t c = 0; c < maps.abnormal.size(); ++c) {
    maps.abnormal.values[c] *= inv;
    maps.normal.values[c] = 1.0 - maps.abnormal.values[c];
  }
  return maps;
}

void accumulate_adapter_gradient(const FeatureRecord& query, const SemanticTrace& trace, const Grid& grad_abnormal,
                                 AdapterGradient& grad) {
  const double inv = 1.0 / static_cast<double>(trace.layers.size());
  Eigen::VectorXd patch(grad.weight.cols());
  for (std::size_t li = 0; li < trace.layers.size(); ++li) {
    const PatchGrid& g = query.grid(trace.layers[li]);
    for (std::size_t c = 0; c < g.cells(); ++c) {
      const double upstream = grad_abnormal.values[c] * inv;
      if (upstream == 0.0) continue;
      const auto& cell = trace.cells[li][c];
      // d sigmoid(t) / dt with t = unit . direction
      const double g_t = upstream * cell.abnormal * (1.0 - cell.abnormal);
      const Eigen::VectorXd g_unit = g_t * trace.direction;
      // Back through z / |z|.
      const Eigen::VectorXd g_z = (g_unit - cell.unit * cell.unit.dot(g_unit)) / cell.norm;
      const auto values = g.values.data() + c * g.d;
      for (std::uint32_t k = 0; k < g.d; ++k) patch[k] = values[k];
      grad.weight.noalias() += g_z * patch.transpose();
      grad.bias += g_z;
    }
  }
}

}  // namespace gads
