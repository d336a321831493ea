#include "gads/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gads/error.hpp"

namespace gads {

namespace {

// -weight * (1 - p)^gamma * log p, the per-target focal term.
double target_term(double p, double weight, double gamma) {
  const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return -weight * std::pow(1.0 - pc, gamma) * std::log(pc);
}

double target_term_grad(double p, double weight, double gamma) {
  if (p < kProbClamp || p > 1.0 - kProbClamp) return 0.0;
  const double q = 1.0 - p;
  double g = std::pow(q, gamma) / p;
  if (gamma != 0.0) g -= gamma * std::pow(q, gamma - 1.0) * std::log(p);
  return -weight * g;
}

void check_mask(const Grid& g, std::span<const std::uint8_t> mask, const char* what) {
  if (mask.size() != g.size()) {
    throw ShapeError(std::string(what) + ": mask has " + std::to_string(mask.size()) + " pixels, map has " +
                     std::to_string(g.size()));
  }
}

}  // namespace

double focal_loss_binary(double p, int y, double gamma, double balance) {
  return y == 1 ? target_term(p, balance, gamma) : target_term(1.0 - p, 1.0 - balance, gamma);
}

double focal_loss_binary_grad(double p, int y, double gamma, double balance) {
  return y == 1 ? target_term_grad(p, balance, gamma) : -target_term_grad(1.0 - p, 1.0 - balance, gamma);
}

double focal_loss_map(const Grid& p_normal, const Grid& p_abnormal, std::span<const std::uint8_t> mask, double gamma,
                      double balance) {
  require_same_shape(p_normal, p_abnormal, "focal_loss_map");
  check_mask(p_abnormal, mask, "focal_loss_map");
  if (mask.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    sum += mask[k] ? target_term(p_abnormal.values[k], balance, gamma)
                   : target_term(p_normal.values[k], 1.0 - balance, gamma);
  }
  return sum / static_cast<double>(mask.size());
}

TwoChannelGrad focal_loss_map_grad(const Grid& p_normal, const Grid& p_abnormal, std::span<const std::uint8_t> mask,
                                   double gamma, double balance) {
  require_same_shape(p_normal, p_abnormal, "focal_loss_map_grad");
  check_mask(p_abnormal, mask, "focal_loss_map_grad");
  TwoChannelGrad g{Grid(p_normal.rows, p_normal.cols), Grid(p_abnormal.rows, p_abnormal.cols)};
  const double inv = mask.empty() ? 0.0 : 1.0 / static_cast<double>(mask.size());
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (mask[k]) {
      g.abnormal.values[k] = inv * target_term_grad(p_abnormal.values[k], balance, gamma);
    } else {
      g.normal.values[k] = inv * target_term_grad(p_normal.values[k], 1.0 - balance, gamma);
    }
  }
  return g;
}

double dice_loss(const Grid& pred, std::span<const std::uint8_t> mask, double eps) {
  check_mask(pred, mask, "dice_loss");
  double inter = 0.0, sum_pred = 0.0, sum_mask = 0.0;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    inter += pred.values[k] * mask[k];
    sum_pred += pred.values[k];
    sum_mask += mask[k];
  }
  return 1.0 - (2.0 * inter + eps) / (sum_pred + sum_mask + eps);
}

Grid dice_loss_grad(const Grid& pred, std::span<const std::uint8_t> mask, double eps) {
  check_mask(pred, mask, "dice_loss_grad");
  double inter = 0.0, sum_pred = 0.0, sum_mask = 0.0;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    inter += pred.values[k] * mask[k];
    sum_pred += pred.values[k];
    sum_mask += mask[k];
  }
  const double num = 2.0 * inter + eps;
  const double den = sum_pred + sum_mask + eps;
  Grid g(pred.rows, pred.cols);
  for (std::size_t k = 0; k < mask.size(); ++k) {
    g.values[k] = -(2.0 * mask[k] * den - num) / (den * den);
  }
  return g;
}

std::vector<Upsampler::Tap> Upsampler::taps(std::size_t source, std::size_t target) {
  std::vector<Tap> out(target);
  for (std::size_t t = 0; t < target; ++t) {
    if (source == 1 || target == 1) {
      out[t] = Tap{0, 0, 0.0};
      continue;
    }
    const double pos = static_cast<double>(t) * static_cast<double>(source - 1) / static_cast<double>(target - 1);
    const auto lo = std::min(static_cast<std::size_t>(std::floor(pos)), source - 1);
    const auto hi = std::min(lo + 1, source - 1);
    out[t] = Tap{lo, hi, hi == lo ? 0.0 : pos - static_cast<double>(lo)};
  }
  return out;
}

Upsampler::Upsampler(std::size_t rows, std::size_t cols, std::size_t target_rows, std::size_t target_cols)
    : rows_(rows), cols_(cols), target_rows_(target_rows), target_cols_(target_cols) {
  if (rows == 0 || cols == 0) throw ArgumentError("upsample: empty source grid");
  if (target_rows == 0 || target_cols == 0) throw ArgumentError("upsample: zero-sized target");
  if (target_rows < rows || target_cols < cols) throw ArgumentError("upsample: target smaller than source");
  row_taps_ = taps(rows, target_rows);
  col_taps_ = taps(cols, target_cols);
}

Grid Upsampler::forward(const Grid& source) const {
  if (source.rows != rows_ || source.cols != cols_) throw ShapeError("upsample: source shape mismatch");
  Grid out(target_rows_, target_cols_);
  for (std::size_t r = 0; r < target_rows_; ++r) {
    const Tap& tr = row_taps_[r];
    for (std::size_t c = 0; c < target_cols_; ++c) {
      const Tap& tc = col_taps_[c];
      const double top = (1.0 - tc.frac) * source(tr.lo, tc.lo) + tc.frac * source(tr.lo, tc.hi);
      const double bottom = (1.0 - tc.frac) * source(tr.hi, tc.lo) + tc.frac * source(tr.hi, tc.hi);
      out(r, c) = (1.0 - tr.frac) * top + tr.frac * bottom;
    }
  }
  return out;
}

Grid Upsampler::adjoint(const Grid& target_grad) const {
  if (target_grad.rows != target_rows_ || target_grad.cols != target_cols_) {
    throw ShapeError("upsample adjoint: gradient shape mismatch");
  }
  Grid out(rows_, cols_);
  for (std::size_t r = 0; r < target_rows_; ++r) {
    const Tap& tr = row_taps_[r];
    for (std::size_t c = 0; c < target_cols_; ++c) {
      const Tap& tc = col_taps_[c];
      const double g = target_grad(r, c);
      out(tr.lo, tc.lo) += g * (1.0 - tr.frac) * (1.0 - tc.frac);
      out(tr.lo, tc.hi) += g * (1.0 - tr.frac) * tc.frac;
      out(tr.hi, tc.lo) += g * tr.frac * (1.0 - tc.frac);
      out(tr.hi, tc.hi) += g * tr.frac * tc.frac;
    }
  }
  return out;
}

Grid upsample(const Grid& map, std::size_t target_rows, std::size_t target_cols) {
  return Upsampler(map.rows, map.cols, target_rows, target_cols).forward(map);
}

}  // namespace gads
