#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>

#include "gads/checkpoint.hpp"
#include "gads/error.hpp"
#include "gads/synth.hpp"
#include "gads/training.hpp"
#include "support.hpp"

using namespace gads;

namespace {

struct Instance {
  std::vector<FeatureRecord> records;  // queries followed by prompts
  TextPrototypes protos;
  AdapterParams params;
  std::vector<Episode> episodes;
};

// Small randomized problem: d_cls = d_patch = 8, d_text = 6 would break the
// semantic score (it needs d_cls == d_text), so the class token uses d_text.
Instance make_instance(std::uint64_t seed, std::size_t n_queries, bool abnormal_queries) {
  Rng rng(seed);
  testing::Shape s;
  s.d_cls = 6;
  s.d_patch = 8;
  s.image = 8;
  Instance inst;
  inst.protos = testing::random_protos(rng, 6);
  inst.params = testing::random_params(rng, 6, 8, 6);
  for (std::size_t q = 0; q < n_queries; ++q) {
    const std::uint8_t label = abnormal_queries && q % 2 == 1;
    inst.records.push_back(testing::random_record(rng, s, "q" + std::to_string(q), "c", label, true));
  }
  for (std::size_t p = 0; p < 2 * n_queries; ++p) {
    inst.records.push_back(testing::random_record(rng, s, "p" + std::to_string(p)));
  }
  for (std::size_t q = 0; q < n_queries; ++q) {
    std::vector<const FeatureRecord*> bank{&inst.records[n_queries + 2 * q], &inst.records[n_queries + 2 * q + 1]};
    inst.episodes.push_back(make_episode(inst.records[q], bank, s.layers));
  }
  return inst;
}

TrainConfig small_config() {
  TrainConfig c;
  c.layers = {0, 1};
  return c;
}

}  // namespace

TEST_CASE("configuration defaults") {
  const TrainConfig c;
  CHECK(c.lr == 1e-3);
  CHECK(c.epochs == 10);
  CHECK(c.batch == 48);
  CHECK(c.alpha == 0.5);
  CHECK(c.beta == 0.75);
  CHECK(c.tau == 1.0);
  CHECK(c.focal_gamma == 2.0);
  CHECK(c.focal_balance == 0.25);
  CHECK_NOTHROW(c.validate());
  TrainConfig bad;
  bad.batch = 0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = TrainConfig{};
  bad.tau = 0.0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = TrainConfig{};
  bad.alpha = -0.1;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
}

TEST_CASE("initialization") {
  const auto a = init_params(6, 8, 6, 3);
  const auto b = init_params(6, 8, 6, 3);
  CHECK(bit_equal(a, b));
  CHECK_FALSE(bit_equal(a, init_params(6, 8, 6, 4)));
  CHECK((a.psi.weight - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 0.01);
  CHECK(a.head.weight.isZero());
  CHECK(a.phi1.branch == Branch::dasl);
  CHECK(a.phi2.branch == Branch::oasl);
  CHECK_FALSE(a.phi1.weight == a.phi2.weight);
}

TEST_CASE("analytic gradients match central differences") {
  const auto cfg = small_config();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    const auto mixed = make_instance(seed, 3, true);
    for (const auto& c : check_dasl_gradients(mixed.episodes, mixed.params, mixed.protos, cfg)) {
      CAPTURE(c.tensor);
      CHECK(c.relative_error < 1e-3);
    }
    const auto normals = make_instance(seed + 100, 3, false);
    for (const auto& c : check_oasl_gradients(normals.episodes, normals.params, normals.protos, cfg)) {
      CAPTURE(c.tensor);
      CHECK(c.relative_error < 1e-3);
    }
  }
}

TEST_CASE("discriminative loss is the batch mean of per-sample losses") {
  const auto inst = make_instance(7, 2, true);
  const auto cfg = small_config();
  const auto both = loss_dasl(inst.episodes, inst.params, inst.protos, cfg);
  const auto one = loss_dasl(std::span(inst.episodes).subspan(0, 1), inst.params, inst.protos, cfg);
  const auto two = loss_dasl(std::span(inst.episodes).subspan(1, 1), inst.params, inst.protos, cfg);
  CHECK(both.loss == doctest::Approx((one.loss + two.loss) / 2).epsilon(1e-13));
  CHECK(both.loss >= 0.0);
  // The one-class adapter does not feed this loss.
  CHECK(both.grad.phi2.weight.isZero());
  CHECK(std::abs(both.loss - (both.image_loss + both.pixel_loss)) < 1e-12);
}

TEST_CASE("one-class loss contracts") {
  const auto cfg = small_config();
  SUBCASE("abnormal records are rejected") {
    const auto inst = make_instance(8, 2, true);
    CHECK_THROWS_AS(loss_oasl(inst.episodes, inst.params, inst.protos, cfg), ContractError);
  }
  SUBCASE("near-zero abnormal map and zero residual is near the optimum") {
    Rng rng(9);
    testing::Shape s;
    s.d_cls = 6;
    auto q = testing::random_record(rng, s, "q");  // no mask: read as empty
    const std::vector<const FeatureRecord*> bank{&q};
    const std::vector<Episode> batch{make_episode(q, bank, s.layers)};
    TextPrototypes protos{{1, 0, 0, 0, 0, 0}, {0, 1, 0, 0, 0, 0}};
    auto params = init_params(6, 8, 6, 0);
    params.phi2.weight.setZero();
    params.phi2.bias.setZero();
    params.phi2.bias[0] = 1.0;  // every projection equals the normal prototype
    auto c = cfg;
    c.tau = 0.01;
    const auto r = loss_oasl(batch, params, protos, c);
    CHECK(r.loss < 1e-6);
    CHECK(r.grad.phi1.weight.isZero());
    CHECK(r.grad.psi_weight.isZero());
  }
}

TEST_CASE("flat parameter views") {
  Rng rng(10);
  const auto p = testing::random_params(rng, 6, 8, 5);
  auto q = init_params(6, 8, 5, 1);
  unpack_dasl(pack_dasl(p), q);
  unpack_oasl(pack_oasl(p), q);
  CHECK(bit_equal(p, q));
  CHECK(pack_dasl(p).size() == 6 * 6 + 6 + 6 + 1 + 5 * 8 + 5);
  CHECK(pack_oasl(p).size() == 5 * 8 + 5);
  // Row-major order: second entry is psi.weight(0, 1).
  CHECK(pack_dasl(p)[1] == p.psi.weight(0, 1));
}

TEST_CASE("Adam first step") {
  Adam opt(1e-3);
  Eigen::VectorXd theta(3), grad(3);
  theta << 1.0, -2.0, 0.5;
  grad << 0.3, -4.0, 0.0;
  const Eigen::VectorXd before = theta;
  opt.step(theta, grad);
  // Bias-corrected first step is lr * g / (|g| + eps).
  for (int k = 0; k < 3; ++k) {
    CHECK(theta[k] == doctest::Approx(before[k] - 1e-3 * grad[k] / (std::abs(grad[k]) + 1e-8)).epsilon(1e-12));
  }
  CHECK(opt.steps() == 1);
}

TEST_CASE("training") {
  SynthConfig sc;
  sc.train_normals = 60;
  sc.train_abnormals = 15;
  sc.test_normals = 3;
  sc.test_abnormals = 3;
  sc.d_cls = sc.d_patch = sc.d_text = 8;
  sc.grid = 6;
  sc.block = 3;
  sc.image = 12;
  const auto data = generate_synthetic(sc);
  TrainConfig cfg;
  cfg.batch = 16;
  cfg.epochs = 3;
  cfg.seed = 5;

  SUBCASE("zero epochs returns the initialization") {
    auto c = cfg;
    c.epochs = 0;
    const auto r = train(data.train, data.protos, c);
    CHECK(bit_equal(r.params, init_params(8, 8, 8, 5)));
    CHECK(r.history.empty());
  }
  SUBCASE("loss decreases on planted anomalies") {
    auto c = cfg;
    c.epochs = 6;
    c.lr = 1e-2;
    const auto init = init_params(8, 8, 8, c.seed);
    const auto before = dataset_losses(data.train, init, data.protos, c, 1);
    const auto r = train(data.train, data.protos, c);
    const auto after = dataset_losses(data.train, r.params, data.protos, c, 1);
    CHECK(after.dasl < before.dasl);
    CHECK(after.oasl < before.oasl);
  }
  SUBCASE("deterministic and branch-isolated") {
    AdapterParams prev = init_params(8, 8, 8, cfg.seed);
    bool phi2_moved = false, phi1_moved = false;
    const auto a = train(data.train, data.protos, cfg, [&](const StepRecord&, const AdapterParams& p) {
      phi1_moved |= !(p.phi1.weight == prev.phi1.weight);
      phi2_moved |= !(p.phi2.weight == prev.phi2.weight);
      prev = p;
    });
    const auto b = train(data.train, data.protos, cfg);
    CHECK(bit_equal(a.params, b.params));
    CHECK(a.history.size() == b.history.size());
    CHECK(phi1_moved);
    CHECK(phi2_moved);
    CHECK(a.history.size() == static_cast<std::size_t>(cfg.epochs) * ((data.train.records.size() + 15) / 16));
  }
  SUBCASE("finite-difference check mode runs") {
    auto c = cfg;
    c.epochs = 1;
    c.grad_mode = GradMode::finite_diff_check;
    CHECK_NOTHROW(train(data.train, data.protos, c));
  }
  SUBCASE("mismatched prototype dimension") {
    TextPrototypes p{{1, 0, 0}, {0, 1, 0}};
    CHECK_THROWS_AS(train(data.train, p, cfg), ShapeError);
  }
  SUBCASE("too few normals for the shot count") {
    auto c = cfg;
    c.shots = 100;
    CHECK_THROWS_AS(train(data.train, data.protos, c), InsufficientNormalsError);
  }
}

TEST_CASE("checkpoints") {
  Rng rng(11);
  const auto p = testing::random_params(rng, 6, 8, 6);
  const auto dir = testing::scratch_dir("ckpt");
  write_checkpoint(p, dir / "a.gcp");
  const auto back = read_checkpoint(dir / "a.gcp");
  CHECK(bit_equal(p, back));
  CHECK(back.phi1.branch == Branch::dasl);
  CHECK(back.phi2.branch == Branch::oasl);
  CHECK(std::filesystem::file_size(dir / "a.gcp") == 8 + 4 * 4 + 8 * (36 + 6 + 6 + 1 + 2 * (48 + 6)));

  std::filesystem::copy_file(dir / "a.gcp", dir / "t.gcp");
  std::filesystem::resize_file(dir / "t.gcp", std::filesystem::file_size(dir / "a.gcp") - 8);
  CHECK_THROWS_AS(read_checkpoint(dir / "t.gcp"), CorruptFileError);

  {
    std::ofstream f(dir / "m.gcp", std::ios::binary);
    f << "NOTACKPT";
  }
  CHECK_THROWS_AS(read_checkpoint(dir / "m.gcp"), FormatError);

  auto bad = p;
  bad.phi2.bias[0] = std::nan("");
  CHECK_THROWS(write_checkpoint(bad, dir / "n.gcp"));
}
