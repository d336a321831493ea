#include "gads/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <numeric>

#include "gads/dasl.hpp"
#include "gads/error.hpp"
#include "gads/losses.hpp"
#include "gads/oasl.hpp"
#include "gads/random.hpp"

namespace gads {

namespace {

constexpr std::uint64_t kStreamPsi = 0x70736931;
constexpr std::uint64_t kStreamPhi1 = 0x70686931;
constexpr std::uint64_t kStreamPhi2 = 0x70686932;
constexpr std::uint64_t kStreamData = 0x64617461;

std::vector<std::uint8_t> empty_mask(const FeatureRecord& r) {
  return std::vector<std::uint8_t>(r.image_dims.pixels(), 0);
}

/// Pixel-level terms shared by both branches:
///   focal([U S_n, U S_a], G) + dice(U S_a, G) + dice(U (M + S_a) / 2, G)
/// Returns the loss and, through grad_abnormal, d loss / d S_a on the patch grid.
double pixel_terms(const SemanticMaps& maps, const ResidualMap& residual, std::span<const std::uint8_t> mask,
                   const ImageDims& image, const TrainConfig& cfg, Grid* grad_abnormal) {
  const Upsampler up(maps.abnormal.rows, maps.abnormal.cols, image.h, image.w);
  const Grid p_abnormal = up.forward(maps.abnormal);
  const Grid p_normal = up.forward(maps.normal);
  const Grid fused = up.forward(dasl::pixel_map(residual, maps));

  const double loss = focal_loss_map(p_normal, p_abnormal, mask, cfg.focal_gamma, cfg.focal_balance) +
                      dice_loss(p_abnormal, mask, cfg.dice_eps) + dice_loss(fused, mask, cfg.dice_eps);
  if (grad_abnormal != nullptr) {
    const TwoChannelGrad focal = focal_loss_map_grad(p_normal, p_abnormal, mask, cfg.focal_gamma, cfg.focal_balance);
    const Grid dice_a = dice_loss_grad(p_abnormal, mask, cfg.dice_eps);
    const Grid dice_fused = dice_loss_grad(fused, mask, cfg.dice_eps);
    Grid g_abnormal(image.h, image.w);
    for (std::size_t k = 0; k < g_abnormal.size(); ++k) {
      // P_n = 1 - P_a, fused = (U M + P_a) / 2
      g_abnormal.values[k] = focal.abnormal.values[k] - focal.normal.values[k] + dice_a.values[k] +
                             0.5 * dice_fused.values[k];
    }
    *grad_abnormal = up.adjoint(g_abnormal);
  }
  return loss;
}

void check_batch(std::span<const Episode> batch) {
  if (batch.empty()) throw ArgumentError("empty batch");
  for (const auto& e : batch) {
    if (e.query == nullptr || e.bank.empty()) throw ArgumentError("episode without query or prompts");
  }
}

Eigen::VectorXd flatten(const Eigen::MatrixXd& m) {
  Eigen::VectorXd out(m.size());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[k++] = m(i, j);
  return out;
}

Eigen::Index unflatten(const Eigen::VectorXd& flat, Eigen::Index offset, Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = flat[offset++];
  return offset;
}

Eigen::Index unflatten(const Eigen::VectorXd& flat, Eigen::Index offset, Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = flat[offset++];
  return offset;
}

Eigen::VectorXd concat(std::initializer_list<Eigen::VectorXd> parts) {
  Eigen::Index n = 0;
  for (const auto& p : parts) n += p.size();
  Eigen::VectorXd out(n);
  Eigen::Index k = 0;
  for (const auto& p : parts) {
    out.segment(k, p.size()) = p;
    k += p.size();
  }
  return out;
}

Eigen::VectorXd scalar(double v) { return Eigen::VectorXd::Constant(1, v); }

struct Segment {
  std::string name;
  Eigen::Index size;
};

std::vector<GradientCheck> compare(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric,
                                   const std::vector<Segment>& segments) {
  std::vector<GradientCheck> out;
  Eigen::Index offset = 0;
  for (const auto& s : segments) {
    const auto a = analytic.segment(offset, s.size);
    const auto n = numeric.segment(offset, s.size);
    const double err = (a - n).cwiseAbs().maxCoeff();
    const double scale = std::max({a.cwiseAbs().maxCoeff(), n.cwiseAbs().maxCoeff(), 1e-8});
    out.push_back(GradientCheck{s.name, err, err / scale});
    offset += s.size;
  }
  return out;
}

template <typename LossFn, typename Pack, typename Unpack>
Eigen::VectorXd numeric_gradient(const AdapterParams& params, LossFn loss, Pack pack, Unpack unpack, double h) {
  AdapterParams probe = params;
  Eigen::VectorXd theta = pack(params);
  Eigen::VectorXd grad(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + h;
    unpack(theta, probe);
    const double plus = loss(probe);
    theta[i] = saved - h;
    unpack(theta, probe);
    const double minus = loss(probe);
    theta[i] = saved;
    grad[i] = (plus - minus) / (2.0 * h);
  }
  return grad;
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
  return idx;
}

/// Per-class normal pools and per-record normalized patches for episode construction.
class EpisodeSampler {
 public:
  EpisodeSampler(const FeatureSet& set, std::vector<std::uint32_t> layers, std::size_t shots)
      : set_(set), layers_(std::move(layers)), shots_(shots) {
    for (std::size_t i = 0; i < set.records.size(); ++i) {
      if (set.records[i].is_normal()) pools_[set.records[i].class_name].push_back(i);
    }
    normalized_.reserve(set.records.size());
    for (const auto& r : set.records) normalized_.push_back(normalize_record(r, layers_));
  }

  Episode episode(std::size_t index, Rng& rng) const {
    const FeatureRecord& query = set_.records[index];
    std::vector<std::size_t> candidates;
    if (auto it = pools_.find(query.class_name); it != pools_.end()) {
      for (std::size_t c : it->second)
        if (c != index) candidates.push_back(c);
    }
    if (candidates.size() < shots_) {
      throw InsufficientNormalsError("class '" + query.class_name + "' has " + std::to_string(candidates.size()) +
                                     " other normal records, episodes need " + std::to_string(shots_));
    }
    Episode e;
    e.query = &query;
    std::vector<const NormalizedRecord*> bank_norm;
    for (std::size_t pick : select_sorted(candidates.size(), shots_, rng)) {
      e.bank.push_back(&set_.records[candidates[pick]]);
      bank_norm.push_back(&normalized_[candidates[pick]]);
    }
    e.residual = patch_residual_map(normalized_[index], bank_norm, layers_);
    return e;
  }

  const std::vector<std::uint32_t>& layers() const { return layers_; }

 private:
  const FeatureSet& set_;
  std::vector<std::uint32_t> layers_;
  std::size_t shots_;
  std::map<std::string, std::vector<std::size_t>> pools_;
  std::vector<NormalizedRecord> normalized_;
};

}  // namespace

void TrainConfig::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(alpha)) throw ArgumentError("alpha must lie in [0, 1]");
  if (!unit(beta)) throw ArgumentError("beta must lie in [0, 1]");
  if (!(tau > 0.0)) throw ArgumentError("tau must be positive");
  if (!(focal_gamma >= 0.0)) throw ArgumentError("focal gamma must be nonnegative");
  if (!unit(focal_balance)) throw ArgumentError("focal balance must lie in [0, 1]");
  if (!(dice_eps > 0.0)) throw ArgumentError("dice epsilon must be positive");
  if (!(lr > 0.0)) throw ArgumentError("learning rate must be positive");
  if (epochs < 0) throw ArgumentError("epochs must be nonnegative");
  if (batch < 1) throw ArgumentError("batch size must be at least 1");
  if (shots < 1) throw ArgumentError("shots must be at least 1");
}

AdapterParams init_params(std::size_t d_cls, std::size_t d_patch, std::size_t d_text, std::uint64_t seed) {
  if (d_cls == 0 || d_patch == 0 || d_text == 0) throw ArgumentError("adapter dimensions must be positive");
  const auto n_cls = static_cast<Eigen::Index>(d_cls);
  const auto n_patch = static_cast<Eigen::Index>(d_patch);
  const auto n_text = static_cast<Eigen::Index>(d_text);
  AdapterParams p;

  Rng psi_rng(derive_seed(seed, kStreamPsi));
  p.psi.weight = Eigen::MatrixXd::Identity(n_cls, n_cls);
  for (Eigen::Index i = 0; i < n_cls; ++i)
    for (Eigen::Index j = 0; j < n_cls; ++j) p.psi.weight(i, j) += psi_rng.normal(0.0, 1e-3);
  p.psi.bias = Eigen::VectorXd::Zero(n_cls);
  p.head.weight = Eigen::VectorXd::Zero(n_cls);
  p.head.bias = 0.0;

  auto gaussian_adapter = [&](std::uint64_t stream, Branch branch) {
    Rng rng(derive_seed(seed, stream));
    PatchTextAdapter a{Eigen::MatrixXd(n_text, n_patch), Eigen::VectorXd::Zero(n_text), branch};
    for (Eigen::Index i = 0; i < n_text; ++i)
      for (Eigen::Index j = 0; j < n_patch; ++j) a.weight(i, j) = rng.normal(0.0, 0.02);
    return a;
  };
  p.phi1 = gaussian_adapter(kStreamPhi1, Branch::dasl);
  p.phi2 = gaussian_adapter(kStreamPhi2, Branch::oasl);
  return p;
}

bool bit_equal(const AdapterParams& a, const AdapterParams& b) {
  auto same = [](const auto& x, const auto& y) {
    return x.size() == y.size() && std::equal(x.data(), x.data() + x.size(), y.data(), [](double u, double v) {
             return std::bit_cast<std::uint64_t>(u) == std::bit_cast<std::uint64_t>(v);
           });
  };
  return same(a.psi.weight, b.psi.weight) && same(a.psi.bias, b.psi.bias) && same(a.head.weight, b.head.weight) &&
         std::bit_cast<std::uint64_t>(a.head.bias) == std::bit_cast<std::uint64_t>(b.head.bias) &&
         same(a.phi1.weight, b.phi1.weight) && same(a.phi1.bias, b.phi1.bias) && same(a.phi2.weight, b.phi2.weight) &&
         same(a.phi2.bias, b.phi2.bias);
}

Episode make_episode(const FeatureRecord& query, std::vector<const FeatureRecord*> bank,
                     std::span<const std::uint32_t> layers) {
  if (bank.empty()) throw ArgumentError("episode needs at least one prompt");
  PromptBank pb;
  for (const auto* p : bank) pb.prompts.push_back(*p);
  Episode e;
  e.query = &query;
  e.residual = patch_residual_map(query, pb, layers);
  e.bank = std::move(bank);
  return e;
}

Gradients Gradients::zeros_like(const AdapterParams& p) {
  Gradients g;
  g.psi_weight = Eigen::MatrixXd::Zero(p.psi.weight.rows(), p.psi.weight.cols());
  g.psi_bias = Eigen::VectorXd::Zero(p.psi.bias.size());
  g.head_weight = Eigen::VectorXd::Zero(p.head.weight.size());
  g.head_bias = 0.0;
  g.phi1 = AdapterGradient{Eigen::MatrixXd::Zero(p.phi1.weight.rows(), p.phi1.weight.cols()),
                           Eigen::VectorXd::Zero(p.phi1.bias.size())};
  g.phi2 = AdapterGradient{Eigen::MatrixXd::Zero(p.phi2.weight.rows(), p.phi2.weight.cols()),
                           Eigen::VectorXd::Zero(p.phi2.bias.size())};
  return g;
}

LossResult loss_dasl(std::span<const Episode> batch, const AdapterParams& params, const TextPrototypes& protos,
                     const TrainConfig& config, bool require_pixel_terms) {
  check_batch(batch);
  const bool any_mask = std::any_of(batch.begin(), batch.end(), [](const Episode& e) { return e.query->mask.has_value(); });
  if (require_pixel_terms && !any_mask) throw ArgumentError("pixel terms requested but no record in the batch has a mask");

  LossResult out;
  out.grad = Gradients::zeros_like(params);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  const double a = config.alpha;

  for (const Episode& e : batch) {
    const FeatureRecord& q = *e.query;

    // Image level.
    const Eigen::VectorXd proto = image_prototype(e.bank, params.psi);
    const Eigen::VectorXd residual = image_residual(q, proto, params.psi);
    const double s_i = residual_score(residual, params.head);
    const double s_q = e.semantic_score ? *e.semantic_score : dasl::semantic_score(q.class_embed, protos, config.tau);
    const ResidualMap m_x = rescale(e.residual.map);
    const double s = dasl::fuse_image_score(s_i, s_q, m_x, a);
    const double l_image = focal_loss_binary(s, q.label, config.focal_gamma, config.focal_balance);
    out.image_loss += l_image * inv_batch;
    out.loss += l_image * inv_batch;

    const double g_s = focal_loss_binary_grad(s, q.label, config.focal_gamma, config.focal_balance) * inv_batch;
    const double g_logit = g_s * (1.0 - a) * 0.5 * s_i * (1.0 - s_i);
    out.grad.head_weight += g_logit * residual;
    out.grad.head_bias += g_logit;
    const Eigen::VectorXd g_residual = g_logit * params.head.weight;
    // residual = psi(f_x) - mean_k psi(f_k)
    out.grad.psi_weight.noalias() += g_residual * to_vector(q.class_embed).transpose();
    out.grad.psi_bias += g_residual;
    const double inv_k = 1.0 / static_cast<double>(e.bank.size());
    for (const FeatureRecord* p : e.bank) {
      out.grad.psi_weight.noalias() -= inv_k * g_residual * to_vector(p->class_embed).transpose();
      out.grad.psi_bias -= inv_k * g_residual;
    }

    // Pixel level, mask-bearing records only.
    if (!q.mask) continue;
    SemanticTrace trace;
    const SemanticMaps maps = dasl::semantic_maps(q, protos, params.phi1, config.layers, config.tau, &trace);
    Grid g_abnormal;
    const double l_pixel = pixel_terms(maps, m_x, *q.mask, q.image_dims, config, &g_abnormal);
    out.pixel_loss += l_pixel * inv_batch;
    out.loss += l_pixel * inv_batch;
    for (double& v : g_abnormal.values) v *= inv_batch;
    accumulate_adapter_gradient(q, trace, g_abnormal, out.grad.phi1);
  }
  return out;
}

LossResult loss_oasl(std::span<const Episode> batch, const AdapterParams& params, const TextPrototypes& protos,
                     const TrainConfig& config) {
  check_batch(batch);
  for (const Episode& e : batch) {
    if (!e.query->is_normal()) {
      throw ContractError("one-class loss received abnormal record '" + e.query->id + "'");
    }
  }
  LossResult out;
  out.grad = Gradients::zeros_like(params);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  for (const Episode& e : batch) {
    const FeatureRecord& q = *e.query;
    const std::vector<std::uint8_t> mask = q.mask ? *q.mask : empty_mask(q);
    SemanticTrace trace;
    const SemanticMaps maps = oasl::maps(q, protos, params.phi2, config.layers, config.tau, &trace);
    Grid g_abnormal;
    const double l = pixel_terms(maps, rescale(e.residual.map), mask, q.image_dims, config, &g_abnormal);
    out.pixel_loss += l * inv_batch;
    out.loss += l * inv_batch;
    for (double& v : g_abnormal.values) v *= inv_batch;
    accumulate_adapter_gradient(q, trace, g_abnormal, out.grad.phi2);
  }
  return out;
}

Eigen::VectorXd pack_dasl(const AdapterParams& p) {
  return concat({flatten(p.psi.weight), p.psi.bias, p.head.weight, scalar(p.head.bias), flatten(p.phi1.weight),
                 p.phi1.bias});
}

void unpack_dasl(const Eigen::VectorXd& flat, AdapterParams& p) {
  Eigen::Index k = unflatten(flat, 0, p.psi.weight);
  k = unflatten(flat, k, p.psi.bias);
  k = unflatten(flat, k, p.head.weight);
  p.head.bias = flat[k++];
  k = unflatten(flat, k, p.phi1.weight);
  k = unflatten(flat, k, p.phi1.bias);
  if (k != flat.size()) throw ShapeError("flat parameter vector has the wrong length");
}

Eigen::VectorXd pack_dasl(const Gradients& g) {
  return concat({flatten(g.psi_weight), g.psi_bias, g.head_weight, scalar(g.head_bias), flatten(g.phi1.weight),
                 g.phi1.bias});
}

Eigen::VectorXd pack_oasl(const AdapterParams& p) { return concat({flatten(p.phi2.weight), p.phi2.bias}); }

void unpack_oasl(const Eigen::VectorXd& flat, AdapterParams& p) {
  Eigen::Index k = unflatten(flat, 0, p.phi2.weight);
  k = unflatten(flat, k, p.phi2.bias);
  if (k != flat.size()) throw ShapeError("flat parameter vector has the wrong length");
}

Eigen::VectorXd pack_oasl(const Gradients& g) { return concat({flatten(g.phi2.weight), g.phi2.bias}); }

void Adam::step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
  if (m_.size() == 0) {
    m_ = Eigen::VectorXd::Zero(theta.size());
    v_ = Eigen::VectorXd::Zero(theta.size());
  }
  if (grad.size() != theta.size() || m_.size() != theta.size()) throw ShapeError("Adam: parameter size changed");
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    theta[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

std::vector<GradientCheck> check_dasl_gradients(std::span<const Episode> batch, const AdapterParams& params,
                                                const TextPrototypes& protos, const TrainConfig& config, double step) {
  const LossResult analytic = loss_dasl(batch, params, protos, config);
  const Eigen::VectorXd numeric = numeric_gradient(
      params, [&](const AdapterParams& p) { return loss_dasl(batch, p, protos, config).loss; },
      [](const AdapterParams& p) { return pack_dasl(p); },
      [](const Eigen::VectorXd& v, AdapterParams& p) { unpack_dasl(v, p); }, step);
  return compare(pack_dasl(analytic.grad), numeric,
                 {{"psi.weight", params.psi.weight.size()},
                  {"psi.bias", params.psi.bias.size()},
                  {"head.weight", params.head.weight.size()},
                  {"head.bias", 1},
                  {"phi1.weight", params.phi1.weight.size()},
                  {"phi1.bias", params.phi1.bias.size()}});
}

std::vector<GradientCheck> check_oasl_gradients(std::span<const Episode> batch, const AdapterParams& params,
                                                const TextPrototypes& protos, const TrainConfig& config, double step) {
  const LossResult analytic = loss_oasl(batch, params, protos, config);
  const Eigen::VectorXd numeric = numeric_gradient(
      params, [&](const AdapterParams& p) { return loss_oasl(batch, p, protos, config).loss; },
      [](const AdapterParams& p) { return pack_oasl(p); },
      [](const Eigen::VectorXd& v, AdapterParams& p) { unpack_oasl(v, p); }, step);
  return compare(pack_oasl(analytic.grad), numeric,
                 {{"phi2.weight", params.phi2.weight.size()}, {"phi2.bias", params.phi2.bias.size()}});
}

std::vector<std::uint32_t> resolve_layers(const TrainConfig& config, const FeatureSet& set) {
  if (config.layers.empty()) return set.layer_set;
  std::vector<std::uint32_t> layers = config.layers;
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  for (auto l : layers) {
    if (!std::binary_search(set.layer_set.begin(), set.layer_set.end(), l)) {
      throw ArgumentError("layer " + std::to_string(l) + " is not present in the feature set");
    }
  }
  return layers;
}

TrainResult train(const FeatureSet& trainset, const TextPrototypes& protos, const TrainConfig& config,
                  const StepObserver& observer) {
  config.validate();
  validate(protos);
  if (trainset.records.empty()) throw ArgumentError("training set is empty");
  if (trainset.dims.d_cls != protos.d_text()) {
    throw ShapeError("class embedding dimension must equal the text dimension for the semantic score");
  }
  TrainConfig cfg = config;
  cfg.layers = resolve_layers(config, trainset);

  TrainResult result;
  result.params = init_params(trainset.dims.d_cls, trainset.dims.d_patch, protos.d_text(), cfg.seed);
  if (cfg.epochs == 0) return result;

  const EpisodeSampler sampler(trainset, cfg.layers, cfg.shots);
  std::vector<std::size_t> normals;
  for (std::size_t i = 0; i < trainset.records.size(); ++i)
    if (trainset.records[i].is_normal()) normals.push_back(i);
  if (normals.empty()) throw InsufficientNormalsError("training set has no normal records");

  Rng rng(derive_seed(cfg.seed, kStreamData));
  Adam dasl_opt(cfg.lr);
  Adam oasl_opt(cfg.lr);
  Eigen::VectorXd dasl_theta = pack_dasl(result.params);
  Eigen::VectorXd oasl_theta = pack_oasl(result.params);

  std::vector<std::size_t> normal_order;
  std::size_t normal_cursor = 0;
  auto next_normal = [&]() {
    if (normal_cursor == normal_order.size()) {
      normal_order = permutation(normals.size(), rng);
      normal_cursor = 0;
    }
    return normals[normal_order[normal_cursor++]];
  };

  const auto batch = static_cast<std::size_t>(cfg.batch);
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<std::size_t> order = permutation(trainset.records.size(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch, ++step) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<Episode> mixed;
      for (std::size_t i = start; i < end; ++i) mixed.push_back(sampler.episode(order[i], rng));
      std::vector<Episode> normal_batch;
      for (std::size_t i = 0; i < batch; ++i) normal_batch.push_back(sampler.episode(next_normal(), rng));

      if (cfg.grad_mode == GradMode::finite_diff_check && step == 0) {
        const std::span<const Episode> probe_d(mixed.data(), std::min<std::size_t>(2, mixed.size()));
        const std::span<const Episode> probe_o(normal_batch.data(), std::min<std::size_t>(2, normal_batch.size()));
        auto checks = check_dasl_gradients(probe_d, result.params, protos, cfg);
        auto more = check_oasl_gradients(probe_o, result.params, protos, cfg);
        checks.insert(checks.end(), more.begin(), more.end());
        for (const auto& c : checks) {
          if (!(c.relative_error < 1e-3)) {
            throw ContractError("gradient check failed for " + c.tensor + ": relative error " +
                                std::to_string(c.relative_error));
          }
        }
      }

      const LossResult d = loss_dasl(mixed, result.params, protos, cfg);
      if (!std::isfinite(d.loss)) throw DivergenceError("discriminative loss is not finite at step " + std::to_string(step), step);
      dasl_opt.step(dasl_theta, pack_dasl(d.grad));
      unpack_dasl(dasl_theta, result.params);

      const LossResult o = loss_oasl(normal_batch, result.params, protos, cfg);
      if (!std::isfinite(o.loss)) throw DivergenceError("one-class loss is not finite at step " + std::to_string(step), step);
      oasl_opt.step(oasl_theta, pack_oasl(o.grad));
      unpack_oasl(oasl_theta, result.params);

      StepRecord rec{step, epoch, d.loss, o.loss};
      result.history.push_back(rec);
      if (observer) observer(rec, result.params);
    }
  }
  return result;
}

DatasetLoss dataset_losses(const FeatureSet& set, const AdapterParams& params, const TextPrototypes& protos,
                           const TrainConfig& config, std::uint64_t seed) {
  TrainConfig cfg = config;
  cfg.layers = resolve_layers(config, set);
  const EpisodeSampler sampler(set, cfg.layers, cfg.shots);
  Rng rng(seed);
  std::vector<Episode> all, normal_only;
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    all.push_back(sampler.episode(i, rng));
    if (set.records[i].is_normal()) normal_only.push_back(all.back());
  }
  DatasetLoss out;
  out.dasl = loss_dasl(all, params, protos, cfg).loss;
  if (!normal_only.empty()) out.oasl = loss_oasl(normal_only, params, protos, cfg).loss;
  return out;
}

}  // namespace gads
