#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gads/grid.hpp"

namespace gads {

inline constexpr double kProbClamp = 1e-7;

/// Binary focal loss:
///   -balance * y * (1-p)^gamma * log p - (1-balance) * (1-y) * p^gamma * log(1-p)
/// with p clamped to [1e-7, 1 - 1e-7].
double focal_loss_binary(double p, int y, double gamma, double balance);

/// d focal_loss_binary / dp; zero where the clamp is active.
double focal_loss_binary_grad(double p, int y, double gamma, double balance);

/// Pixel-mean focal loss over a two-channel probability map. Anomalous pixels
/// score the abnormal channel with weight `balance`, normal pixels the normal
/// channel with weight 1 - balance.
double focal_loss_map(const Grid& p_normal, const Grid& p_abnormal, std::span<const std::uint8_t> mask, double gamma,
                      double balance);

struct TwoChannelGrad {
  Grid normal;
  Grid abnormal;
};

TwoChannelGrad focal_loss_map_grad(const Grid& p_normal, const Grid& p_abnormal, std::span<const std::uint8_t> mask,
                                   double gamma, double balance);

/// 1 - (2 * sum(pred * mask) + eps) / (sum(pred) + sum(mask) + eps).
double dice_loss(const Grid& pred, std::span<const std::uint8_t> mask, double eps);
Grid dice_loss_grad(const Grid& pred, std::span<const std::uint8_t> mask, double eps);

/// Corner-aligned bilinear resampling from a (rows, cols) grid to a larger
/// (target_rows, target_cols) grid, with its adjoint for backpropagation.
class Upsampler {
 public:
  Upsampler(std::size_t rows, std::size_t cols, std::size_t target_rows, std::size_t target_cols);

  Grid forward(const Grid& source) const;
  /// Transpose of forward: scatters target-space gradients back onto the source grid.
  Grid adjoint(const Grid& target_grad) const;

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t target_rows() const { return target_rows_; }
  std::size_t target_cols() const { return target_cols_; }

 private:
  struct Tap {
    std::size_t lo = 0;
    std::size_t hi = 0;
    double frac = 0.0;  // weight of hi
  };
  static std::vector<Tap> taps(std::size_t source, std::size_t target);

  std::size_t rows_, cols_, target_rows_, target_cols_;
  std::vector<Tap> row_taps_;
  std::vector<Tap> col_taps_;
};

Grid upsample(const Grid& map, std::size_t target_rows, std::size_t target_cols);

}  // namespace gads
