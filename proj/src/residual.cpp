#include "gads/residual.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gads/error.hpp"

namespace gads {

namespace {

void check_adapter(const ImageAdapter& psi, Eigen::Index d) {
  if (psi.weight.rows() != psi.weight.cols() || psi.bias.size() != psi.weight.rows()) {
    throw ShapeError("image adapter must be square with matching bias");
  }
  if (psi.weight.cols() != d) {
    throw ShapeError("class embedding dimension " + std::to_string(d) + " does not match adapter dimension " +
                     std::to_string(psi.weight.cols()));
  }
}

std::vector<std::uint32_t> sorted_unique(std::span<const std::uint32_t> layers) {
  std::vector<std::uint32_t> out(layers.begin(), layers.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

Eigen::VectorXd ImageAdapter::apply(const Eigen::VectorXd& v) const { return weight * v + bias; }

Eigen::VectorXd to_vector(std::span<const float> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
  return out;
}

double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Eigen::VectorXd image_prototype(std::span<const FeatureRecord* const> bank, const ImageAdapter& psi) {
  if (bank.empty()) throw ArgumentError("prompt bank is empty");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(psi.weight.rows());
  for (const FeatureRecord* p : bank) {
    check_adapter(psi, static_cast<Eigen::Index>(p->class_embed.size()));
    sum += psi.apply(to_vector(p->class_embed));
  }
  return sum / static_cast<double>(bank.size());
}

Eigen::VectorXd image_prototype(const PromptBank& bank, const ImageAdapter& psi) {
  std::vector<const FeatureRecord*> ptrs;
  for (const auto& p : bank.prompts) ptrs.push_back(&p);
  return image_prototype(ptrs, psi);
}

Eigen::VectorXd image_residual(const FeatureRecord& query, const Eigen::VectorXd& proto, const ImageAdapter& psi) {
  check_adapter(psi, static_cast<Eigen::Index>(query.class_embed.size()));
  if (proto.size() != psi.weight.rows()) throw ShapeError("prototype dimension does not match adapter output");
  return psi.apply(to_vector(query.class_embed)) - proto;
}

double residual_score(const Eigen::VectorXd& residual, const ResidualHead& head) {
  if (residual.size() != head.weight.size()) throw ShapeError("residual dimension does not match scoring head");
  return logistic(head.weight.dot(residual) + head.bias);
}

Eigen::MatrixXd normalize_patches(const FeatureRecord& record, std::uint32_t layer) {
  const PatchGrid& g = record.grid(layer);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(g.cells()), static_cast<Eigen::Index>(g.d));
  for (std::uint32_t i = 0; i < g.h; ++i) {
    for (std::uint32_t j = 0; j < g.w; ++j) {
      const auto row = static_cast<Eigen::Index>(i * g.w + j);
      const auto cell = g.cell(i, j);
      double sq = 0.0;
      for (std::size_t c = 0; c < cell.size(); ++c) {
        out(row, static_cast<Eigen::Index>(c)) = cell[c];
        sq += static_cast<double>(cell[c]) * cell[c];
      }
      if (!(sq > 0.0)) {
        throw NormalizationError("zero-norm patch in record '" + record.id + "', layer " + std::to_string(layer) +
                                 ", cell (" + std::to_string(i) + ", " + std::to_string(j) + ")");
      }
      out.row(row) /= std::sqrt(sq);
    }
  }
  return out;
}

NormalizedRecord normalize_record(const FeatureRecord& record, std::span<const std::uint32_t> layers) {
  NormalizedRecord out;
  for (std::uint32_t l : layers) {
    const PatchGrid& g = record.grid(l);
    out.h = g.h;
    out.w = g.w;
    out.layers.emplace(l, normalize_patches(record, l));
  }
  return out;
}

ResidualMap nearest_residual(const Eigen::MatrixXd& query, std::span<const Eigen::MatrixXd* const> bank,
                             std::uint32_t h, std::uint32_t w) {
  if (bank.empty()) throw ArgumentError("prompt bank is empty");
  if (query.rows() != static_cast<Eigen::Index>(h) * w) throw ShapeError("query patch count does not match grid");
  Eigen::VectorXd best = Eigen::VectorXd::Constant(query.rows(), -std::numeric_limits<double>::infinity());
  for (const Eigen::MatrixXd* prompt : bank) {
    if (prompt->cols() != query.cols()) throw ShapeError("prompt patch dimension differs from query");
    const Eigen::MatrixXd sims = query * prompt->transpose();
    best = best.cwiseMax(sims.rowwise().maxCoeff());
  }
  ResidualMap map{Grid(h, w), false};
  for (Eigen::Index k = 0; k < query.rows(); ++k) {
    // Rounding can push a self-match slightly past 1.
    map.values.values[static_cast<std::size_t>(k)] = std::clamp(1.0 - best[k], 0.0, 2.0);
  }
  return map;
}

ResidualMap patch_residual_map_layer(const FeatureRecord& query, const PromptBank& bank, std::uint32_t layer) {
  if (bank.prompts.empty()) throw ArgumentError("prompt bank is empty");
  const Eigen::MatrixXd q = normalize_patches(query, layer);
  std::vector<Eigen::MatrixXd> prompts;
  prompts.reserve(bank.k());
  for (const auto& p : bank.prompts) prompts.push_back(normalize_patches(p, layer));
  std::vector<const Eigen::MatrixXd*> ptrs;
  for (const auto& p : prompts) ptrs.push_back(&p);
  const PatchGrid& g = query.grid(layer);
  return nearest_residual(q, ptrs, g.h, g.w);
}

PatchResidual patch_residual_map(const NormalizedRecord& query, std::span<const NormalizedRecord* const> bank,
                                 std::span<const std::uint32_t> layers) {
  const auto unique_layers = sorted_unique(layers);
  if (unique_layers.empty()) throw ArgumentError("layer set is empty");
  if (bank.empty()) throw ArgumentError("prompt bank is empty");
  Grid sum(query.h, query.w);
  for (std::uint32_t l : unique_layers) {
    auto qit = query.layers.find(l);
    if (qit == query.layers.end()) throw ArgumentError("query lacks layer " + std::to_string(l));
    std::vector<const Eigen::MatrixXd*> ptrs;
    for (const NormalizedRecord* p : bank) {
      auto pit = p->layers.find(l);
      if (pit == p->layers.end()) throw ArgumentError("prompt lacks layer " + std::to_string(l));
      ptrs.push_back(&pit->second);
    }
    const ResidualMap layer_map = nearest_residual(qit->second, ptrs, query.h, query.w);
    for (std::size_t k = 0; k < sum.size(); ++k) sum.values[k] += layer_map.values.values[k];
  }
  for (double& v : sum.values) v /= static_cast<double>(unique_layers.size());
  PatchResidual out{ResidualMap{std::move(sum), false}, 0.0};
  out.peak = rescale(out.map).values.max();
  return out;
}

PatchResidual patch_residual_map(const FeatureRecord& query, const PromptBank& bank,
                                 std::span<const std::uint32_t> layers) {
  const auto unique_layers = sorted_unique(layers);
  if (unique_layers.empty()) throw ArgumentError("layer set is empty");
  if (bank.prompts.empty()) throw ArgumentError("prompt bank is empty");
  const NormalizedRecord q = normalize_record(query, unique_layers);
  std::vector<NormalizedRecord> prompts;
  prompts.reserve(bank.k());
  for (const auto& p : bank.prompts) prompts.push_back(normalize_record(p, unique_layers));
  std::vector<const NormalizedRecord*> ptrs;
  for (const auto& p : prompts) ptrs.push_back(&p);
  return patch_residual_map(q, ptrs, unique_layers);
}

ResidualMap rescale(const ResidualMap& map) {
  if (map.rescaled) return map;
  ResidualMap out{map.values, true};
  for (double& v : out.values.values) v *= 0.5;
  return out;
}

}  // namespace gads
