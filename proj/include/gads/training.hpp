#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gads/features.hpp"
#include "gads/residual.hpp"
#include "gads/semantic.hpp"

namespace gads {

enum class GradMode : std::uint8_t { analytic, finite_diff_check };

struct TrainConfig {
  double alpha = 0.5;
  double beta = 0.75;
  double tau = 1.0;
  double focal_gamma = 2.0;
  double focal_balance = 0.25;
  double dice_eps = 1.0;
  double lr = 1e-3;
  int epochs = 10;
  int batch = 48;
  std::size_t shots = 2;               // in-context prompts per training episode
  std::vector<std::uint32_t> layers;   // empty: every layer of the training set
  std::uint64_t seed = 0;
  GradMode grad_mode = GradMode::analytic;

  /// Throws ArgumentError when a field is out of range.
  void validate() const;
};

/// The four trainable parts: image adapter, residual head and the two
/// patch-to-text adapters.
struct AdapterParams {
  ImageAdapter psi;
  ResidualHead head;
  PatchTextAdapter phi1;  // branch dasl
  PatchTextAdapter phi2;  // branch oasl

  std::size_t d_cls() const { return static_cast<std::size_t>(psi.weight.rows()); }
  std::size_t d_patch() const { return static_cast<std::size_t>(phi1.weight.cols()); }
  std::size_t d_text() const { return static_cast<std::size_t>(phi1.weight.rows()); }
};

/// psi = I + N(0, 1e-3), bias 0; head zero; phi1/phi2 ~ N(0, 0.02) from
/// separate seed streams, bias 0.
AdapterParams init_params(std::size_t d_cls, std::size_t d_patch, std::size_t d_text, std::uint64_t seed);

bool bit_equal(const AdapterParams& a, const AdapterParams& b);

/// A query with its in-context prompts and the (frozen) residual map they induce.
struct Episode {
  const FeatureRecord* query = nullptr;
  std::vector<const FeatureRecord*> bank;
  PatchResidual residual;
  // s_q has no trainable inputs. Setting it here skips the class-token
  // comparison, which lets the losses run when d_cls differs from d_text.
  std::optional<double> semantic_score;
};

Episode make_episode(const FeatureRecord& query, std::vector<const FeatureRecord*> bank,
                     std::span<const std::uint32_t> layers);

struct Gradients {
  Eigen::MatrixXd psi_weight;
  Eigen::VectorXd psi_bias;
  Eigen::VectorXd head_weight;
  double head_bias = 0.0;
  AdapterGradient phi1;
  AdapterGradient phi2;

  static Gradients zeros_like(const AdapterParams& p);
};

struct LossResult {
  double loss = 0.0;
  double image_loss = 0.0;  // mean focal term on fused image scores
  double pixel_loss = 0.0;  // mean focal + dice terms (mask-bearing samples only contribute)
  Gradients grad;
};

/// Mean over the batch of per-sample (image focal + pixel focal + two dice)
/// losses. Records without masks contribute the image term only. Gradients
/// cover psi, head and phi1; the phi2 slot stays zero.
LossResult loss_dasl(std::span<const Episode> batch, const AdapterParams& params, const TextPrototypes& protos,
                     const TrainConfig& config, bool require_pixel_terms = false);

/// One-class pixel loss on normal records only (absent masks read as empty).
/// Gradients cover phi2 only.
LossResult loss_oasl(std::span<const Episode> batch, const AdapterParams& params, const TextPrototypes& protos,
                     const TrainConfig& config);

/// Flat views used by the optimizer and gradient checks. DASL group:
/// psi.weight, psi.bias, head.weight, head.bias, phi1.weight, phi1.bias.
/// OASL group: phi2.weight, phi2.bias. Matrices are flattened row-major.
Eigen::VectorXd pack_dasl(const AdapterParams& p);
void unpack_dasl(const Eigen::VectorXd& flat, AdapterParams& p);
Eigen::VectorXd pack_dasl(const Gradients& g);
Eigen::VectorXd pack_oasl(const AdapterParams& p);
void unpack_oasl(const Eigen::VectorXd& flat, AdapterParams& p);
Eigen::VectorXd pack_oasl(const Gradients& g);

/// Adam with bias correction.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad);
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  Eigen::VectorXd m_, v_;
};

/// Per-tensor comparison of analytic and central finite-difference gradients.
struct GradientCheck {
  std::string tensor;
  double max_abs_error = 0.0;
  double relative_error = 0.0;  // max |a - n| / max(max|a|, max|n|, 1e-8)
};

std::vector<GradientCheck> check_dasl_gradients(std::span<const Episode> batch, const AdapterParams& params,
                                                const TextPrototypes& protos, const TrainConfig& config,
                                                double step = 1e-4);
std::vector<GradientCheck> check_oasl_gradients(std::span<const Episode> batch, const AdapterParams& params,
                                                const TextPrototypes& protos, const TrainConfig& config,
                                                double step = 1e-4);

struct StepRecord {
  long step = 0;
  int epoch = 0;
  double dasl_loss = 0.0;
  double oasl_loss = 0.0;
};

struct TrainResult {
  AdapterParams params;
  std::vector<StepRecord> history;
};

/// Optional per-step observer (progress output, isolation checks).
using StepObserver = std::function<void(const StepRecord&, const AdapterParams&)>;

/// Dual-branch training. Each step draws a mixed batch for the discriminative
/// loss and a normal-only batch for the one-class loss; every episode gets a
/// fresh bank of `shots` same-class normals (excluding the query). Two Adam
/// optimizers update disjoint parameter groups.
TrainResult train(const FeatureSet& trainset, const TextPrototypes& protos, const TrainConfig& config,
                  const StepObserver& observer = {});

/// Layers the config resolves to against a feature set (empty config -> all).
std::vector<std::uint32_t> resolve_layers(const TrainConfig& config, const FeatureSet& set);

struct DatasetLoss {
  double dasl = 0.0;
  double oasl = 0.0;
};

/// Full-dataset losses with banks drawn deterministically from `seed`.
DatasetLoss dataset_losses(const FeatureSet& set, const AdapterParams& params, const TextPrototypes& protos,
                           const TrainConfig& config, std::uint64_t seed);

}  // namespace gads
