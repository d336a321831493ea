#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "gads/dasl.hpp"
#include "gads/error.hpp"
#include "gads/oasl.hpp"
#include "gads/residual.hpp"
#include "gads/semantic.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace gads;

namespace {

ImageAdapter identity(std::size_t d) { return {Eigen::MatrixXd::Identity(d, d), Eigen::VectorXd::Zero(d)}; }

ImageAdapter random_adapter(Rng& rng, std::size_t d) {
  ImageAdapter a{Eigen::MatrixXd(d, d), Eigen::VectorXd(d)};
  for (Eigen::Index k = 0; k < a.weight.size(); ++k) a.weight.data()[k] = rng.normal();
  for (Eigen::Index k = 0; k < a.bias.size(); ++k) a.bias[k] = rng.normal();
  return a;
}

PatchTextAdapter random_phi(Rng& rng, std::size_t d_text, std::size_t d_patch, Branch b) {
  PatchTextAdapter phi{Eigen::MatrixXd(d_text, d_patch), Eigen::VectorXd(d_text), b};
  for (Eigen::Index k = 0; k < phi.weight.size(); ++k) phi.weight.data()[k] = rng.normal();
  for (Eigen::Index k = 0; k < phi.bias.size(); ++k) phi.bias[k] = rng.normal();
  return phi;
}

std::vector<double> row_major(const Eigen::MatrixXd& m) {
  std::vector<double> v;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) v.push_back(m(i, j));
  return v;
}

std::vector<double> as_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

double max_abs_diff(const Grid& a, const Grid& b) {
  REQUIRE(a.same_shape(b));
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a.values[k] - b.values[k]));
  return m;
}

ResidualMap rescaled(Grid g) { return {std::move(g), true}; }

}  // namespace

TEST_CASE("image prototype") {
  Rng rng(10);
  testing::Shape s;
  SUBCASE("singleton bank is the adapted embedding") {
    const auto psi = random_adapter(rng, s.d_cls);
    PromptBank bank{{testing::random_record(rng, s, "p")}};
    const auto proto = image_prototype(bank, psi);
    const auto expected = psi.apply(to_vector(bank.prompts[0].class_embed));
    CHECK((proto - expected).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("identity adapter averages the embeddings") {
    PromptBank bank{{testing::random_record(rng, s, "u"), testing::random_record(rng, s, "v")}};
    const auto proto = image_prototype(bank, identity(s.d_cls));
    for (std::size_t k = 0; k < s.d_cls; ++k) {
      CHECK(proto[k] == doctest::Approx((double(bank.prompts[0].class_embed[k]) + bank.prompts[1].class_embed[k]) / 2)
                            .epsilon(1e-15));
    }
  }
  SUBCASE("K=4 matches a loop over affine maps") {
    const auto psi = random_adapter(rng, s.d_cls);
    PromptBank bank;
    for (int k = 0; k < 4; ++k) bank.prompts.push_back(testing::random_record(rng, s, "p" + std::to_string(k)));
    const auto proto = image_prototype(bank, psi);
    for (std::size_t i = 0; i < s.d_cls; ++i) {
      double sum = 0.0;
      for (const auto& p : bank.prompts) {
        double y = psi.bias[i];
        for (std::size_t j = 0; j < s.d_cls; ++j) y += psi.weight(i, j) * p.class_embed[j];
        sum += y;
      }
      CHECK(std::abs(proto[i] - sum / 4) < 1e-12);
    }
  }
  SUBCASE("empty bank") { CHECK_THROWS(image_prototype(PromptBank{}, identity(s.d_cls))); }
}

TEST_CASE("image residual and score") {
  Rng rng(11);
  testing::Shape s;
  const auto q = testing::random_record(rng, s, "q");
  SUBCASE("query equal to the single prompt gives zero") {
    const auto psi = random_adapter(rng, s.d_cls);
    const auto proto = image_prototype(PromptBank{{q}}, psi);
    CHECK(image_residual(q, proto, psi).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("identity adapter subtracts") {
    Eigen::VectorXd p(s.d_cls);
    for (std::size_t k = 0; k < s.d_cls; ++k) p[k] = rng.normal();
    const auto r = image_residual(q, p, identity(s.d_cls));
    for (std::size_t k = 0; k < s.d_cls; ++k) CHECK(r[k] == double(q.class_embed[k]) - p[k]);
  }
  SUBCASE("random adapter matches element-wise loop") {
    const auto psi = random_adapter(rng, s.d_cls);
    Eigen::VectorXd p(s.d_cls);
    for (std::size_t k = 0; k < s.d_cls; ++k) p[k] = rng.normal();
    const auto r = image_residual(q, p, psi);
    for (std::size_t i = 0; i < s.d_cls; ++i) {
      double y = psi.bias[i];
      for (std::size_t j = 0; j < s.d_cls; ++j) y += psi.weight(i, j) * q.class_embed[j];
      CHECK(std::abs(r[i] - (y - p[i])) < 1e-12);
    }
  }
  SUBCASE("scores") {
    ResidualHead head{Eigen::VectorXd::Zero(s.d_cls), 0.0};
    CHECK(residual_score(Eigen::VectorXd::Zero(s.d_cls), head) == 0.5);
    head.bias = 20.0;
    CHECK(residual_score(Eigen::VectorXd::Random(s.d_cls), head) > 0.999);
    for (int t = 0; t < 20; ++t) {
      ResidualHead h{Eigen::VectorXd(s.d_cls), rng.normal()};
      Eigen::VectorXd f(s.d_cls);
      double z = h.bias;
      for (std::size_t k = 0; k < s.d_cls; ++k) {
        h.weight[k] = rng.normal();
        f[k] = rng.normal();
        z += h.weight[k] * f[k];
      }
      CHECK(std::abs(residual_score(f, h) - 1.0 / (1.0 + std::exp(-z))) < 1e-12);
    }
    CHECK(logistic(-800.0) >= 0.0);
    CHECK(logistic(800.0) == 1.0);
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(image_residual(q, Eigen::VectorXd::Zero(3), identity(s.d_cls)), ShapeError);
  }
}

TEST_CASE("patch residual maps") {
  Rng rng(12);
  testing::Shape s;
  SUBCASE("self bank gives an all-zero map") {
    const auto q = testing::random_record(rng, s, "q");
    const auto pr = patch_residual_map(q, PromptBank{{q}}, s.layers);
    CHECK(pr.map.values.max() <= 1e-12);
    CHECK(pr.peak <= 1e-12);
  }
  SUBCASE("orthogonal cell scores one") {
    testing::Shape one = s;
    one.layers = {0};
    auto q = testing::random_record(rng, one, "q");
    auto p = testing::random_record(rng, one, "p");
    // Prompt patches live in the first 4 channels, query cell (1,2) in the last 4.
    auto& pg = p.patch_grids[0];
    for (std::size_t c = 0; c < pg.cells(); ++c)
      for (std::size_t k = 4; k < 8; ++k) pg.values[c * 8 + k] = 0.0f;
    auto& qg = q.patch_grids[0];
    const std::size_t cell = 1 * 4 + 2;
    for (std::size_t k = 0; k < 4; ++k) qg.values[cell * 8 + k] = 0.0f;
    const auto m = patch_residual_map_layer(q, PromptBank{{p}}, 0);
    CHECK(m.values(1, 2) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_FALSE(m.rescaled);
  }
  SUBCASE("random instances match the exhaustive nearest-neighbour loop") {
    for (int t = 0; t < 10; ++t) {
      const auto q = testing::random_record(rng, s, "q");
      const std::vector<FeatureRecord> bank{testing::random_record(rng, s, "a"), testing::random_record(rng, s, "b")};
      const PromptBank pb{bank};
      for (auto layer : s.layers) {
        CHECK(max_abs_diff(patch_residual_map_layer(q, pb, layer).values, oracle::nn_residual(q, bank, layer)) < 1e-6);
      }
    }
  }
  SUBCASE("layer averaging") {
    testing::Shape three = s;
    three.layers = {1, 4, 9};
    const auto q = testing::random_record(rng, three, "q");
    const std::vector<FeatureRecord> bank{testing::random_record(rng, three, "a")};
    const PromptBank pb{bank};
    const std::vector<std::uint32_t> single{4};
    CHECK(max_abs_diff(patch_residual_map(q, pb, single).map.values, patch_residual_map_layer(q, pb, 4).values) == 0.0);
    const auto all = patch_residual_map(q, pb, three.layers);
    Grid mean(4, 4);
    for (auto layer : three.layers) {
      const auto g = oracle::nn_residual(q, bank, layer);
      for (std::size_t k = 0; k < 16; ++k) mean.values[k] += g.values[k] / 3.0;
    }
    CHECK(max_abs_diff(all.map.values, mean) < 1e-6);
    CHECK(all.peak == doctest::Approx(mean.max() / 2).epsilon(1e-6));
  }
  SUBCASE("a zero layer averages to half") {
    // Layer 1 of the query matches the prompt exactly, so its map is zero.
    auto q = testing::random_record(rng, s, "q");
    auto p = testing::random_record(rng, s, "p");
    p.patch_grids[1] = q.patch_grids[1];
    const PromptBank pb{{p}};
    const auto a = patch_residual_map_layer(q, pb, 0);
    const auto both = patch_residual_map(q, pb, s.layers);
    for (std::size_t k = 0; k < 16; ++k) CHECK(both.map.values.values[k] == doctest::Approx(a.values.values[k] / 2));
  }
  SUBCASE("rescale halves once") {
    ResidualMap m{Grid(2, 2, 1.5), false};
    const auto r = rescale(m);
    CHECK(r.rescaled);
    CHECK(r.values.max() == 0.75);
    CHECK(rescale(r).values == r.values);
  }
  SUBCASE("zero-norm patch is named") {
    auto q = testing::random_record(rng, s, "zero-q");
    for (std::size_t k = 0; k < 8; ++k) q.patch_grids[1].values[(2 * 4 + 3) * 8 + k] = 0.0f;
    try {
      normalize_patches(q, 1);
      FAIL("expected NormalizationError");
    } catch (const NormalizationError& e) {
      const std::string what = e.what();
      CHECK(what.find("zero-q") != std::string::npos);
      CHECK(what.find("(2, 3)") != std::string::npos);
    }
  }
}

TEST_CASE("semantic score") {
  SUBCASE("equal cosines give one half") {
    const TextPrototypes p{{1, 0, 0}, {0, 1, 0}};
    const std::vector<float> g{1, 1, 0.5};
    CHECK(dasl::semantic_score(g, p) == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("aligned with the abnormal prototype") {
    const TextPrototypes p{{0, 1, 0}, {2, 0, 0}};
    const std::vector<float> g{3, 0, 0};
    CHECK(std::abs(dasl::semantic_score(g, p, 1.0) - std::exp(1.0) / (std::exp(1.0) + 1.0)) < 1e-12);
    CHECK(dasl::semantic_score(g, p, 1.0) == doctest::Approx(0.7311).epsilon(1e-4));
  }
  SUBCASE("prototype swap complements") {
    Rng rng(13);
    for (int t = 0; t < 20; ++t) {
      const auto p = testing::random_protos(rng, 6);
      const auto g = testing::random_floats(rng, 6);
      const double a = dasl::semantic_score(g, p, 0.7);
      const double b = dasl::semantic_score(g, TextPrototypes{p.abnormal, p.normal}, 0.7);
      CHECK(std::abs(a + b - 1.0) < 1e-12);
    }
  }
  SUBCASE("errors") {
    const TextPrototypes p{{1, 0}, {0, 1}};
    CHECK_THROWS_AS(dasl::semantic_score(std::vector<float>{1, 0, 0}, p), ShapeError);
    CHECK_THROWS_AS(dasl::semantic_score(std::vector<float>{0, 0}, p), NormalizationError);
  }
}

TEST_CASE("semantic maps") {
  Rng rng(14);
  testing::Shape s;
  const std::size_t d_text = 6;
  SUBCASE("random instance matches the per-cell softmax loop") {
    for (int t = 0; t < 10; ++t) {
      const auto q = testing::random_record(rng, s, "q");
      const auto protos = testing::random_protos(rng, d_text);
      const auto phi = random_phi(rng, d_text, s.d_patch, Branch::dasl);
      const double tau = 0.5 + rng.uniform();
      const auto maps = dasl::semantic_maps(q, protos, phi, s.layers, tau);
      const auto ref =
          oracle::semantic(q, row_major(phi.weight), as_std(phi.bias), protos.normal, protos.abnormal, s.layers, tau);
      CHECK(max_abs_diff(maps.normal, ref.normal) < 1e-6);
      CHECK(max_abs_diff(maps.abnormal, ref.abnormal) < 1e-6);
      for (std::size_t k = 0; k < maps.normal.size(); ++k)
        CHECK(std::abs(maps.normal.values[k] + maps.abnormal.values[k] - 1.0) < 1e-12);
    }
  }
  SUBCASE("equidistant projections give 0.5 everywhere") {
    // Prototypes symmetric about every projection: F_n = e0, F_a = e1 and
    // projections living in span(e2..).
    const TextPrototypes protos{{1, 0, 0, 0, 0, 0}, {0, 1, 0, 0, 0, 0}};
    auto phi = random_phi(rng, d_text, s.d_patch, Branch::dasl);
    phi.weight.row(0).setZero();
    phi.weight.row(1).setZero();
    phi.bias[0] = phi.bias[1] = 0.0;
    const auto q = testing::random_record(rng, s, "q");
    const auto maps = dasl::semantic_maps(q, protos, phi, s.layers, 1.0);
    for (double v : maps.abnormal.values) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
    for (double v : maps.normal.values) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("single layer equals its own softmax grid") {
    const auto q = testing::random_record(rng, s, "q");
    const auto protos = testing::random_protos(rng, d_text);
    const auto phi = random_phi(rng, d_text, s.d_patch, Branch::dasl);
    const std::vector<std::uint32_t> one{1};
    const auto maps = dasl::semantic_maps(q, protos, phi, one, 1.0);
    const auto ref = oracle::semantic(q, row_major(phi.weight), as_std(phi.bias), protos.normal, protos.abnormal, one, 1.0);
    CHECK(max_abs_diff(maps.abnormal, ref.abnormal) < 1e-12);
  }
  SUBCASE("one-class maps with equal parameters match the discriminative maps") {
    const auto q = testing::random_record(rng, s, "q");
    const auto protos = testing::random_protos(rng, d_text);
    const auto phi1 = random_phi(rng, d_text, s.d_patch, Branch::dasl);
    PatchTextAdapter phi2 = phi1;
    phi2.branch = Branch::oasl;
    const auto a = dasl::semantic_maps(q, protos, phi1, s.layers, 1.0);
    const auto b = oasl::maps(q, protos, phi2, s.layers, 1.0);
    CHECK(a.abnormal == b.abnormal);
    CHECK(a.normal == b.normal);
  }
  SUBCASE("branch tags are enforced") {
    const auto q = testing::random_record(rng, s, "q");
    const auto protos = testing::random_protos(rng, d_text);
    const auto phi = random_phi(rng, d_text, s.d_patch, Branch::dasl);
    CHECK_THROWS_AS(oasl::maps(q, protos, phi, s.layers, 1.0), ConfigurationError);
    PatchTextAdapter other = phi;
    other.branch = Branch::oasl;
    CHECK_THROWS_AS(dasl::semantic_maps(q, protos, other, s.layers, 1.0), ConfigurationError);
  }
  SUBCASE("mismatched adapter shape") {
    const auto q = testing::random_record(rng, s, "q");
    const auto protos = testing::random_protos(rng, d_text);
    const auto phi = random_phi(rng, d_text, s.d_patch + 1, Branch::dasl);
    CHECK_THROWS_AS(dasl::semantic_maps(q, protos, phi, s.layers, 1.0), ShapeError);
  }
  SUBCASE("two-way softmax") {
    CHECK(two_way_softmax(0.3, 0.3, 2.0) == 0.5);
    CHECK(std::abs(two_way_softmax(1.0, 0.0, 1.0) - std::exp(1.0) / (std::exp(1.0) + 1.0)) < 1e-15);
  }
}

TEST_CASE("image score fusion") {
  ResidualMap m = rescaled(Grid(2, 2, 0.1));
  m.values(1, 0) = 0.8;
  CHECK(dasl::fuse_image_score(0.4, 0.6, m, 0.5) == doctest::Approx(0.65).epsilon(1e-15));
  CHECK(dasl::fuse_image_score(0.4, 0.6, m, 0.0) == (0.4 + 0.6) / 2.0);
  CHECK(dasl::fuse_image_score(0.4, 0.6, m, 1.0) == 0.8);
  CHECK_THROWS_AS(dasl::fuse_image_score(0.4, 0.6, m, 1.5), ArgumentError);
  CHECK_THROWS(dasl::fuse_image_score(0.4, 0.6, ResidualMap{Grid(2, 2, 0.1), false}, 0.5));
}

TEST_CASE("pixel maps") {
  Rng rng(15);
  SUBCASE("constant operands") {
    const SemanticMaps s{Grid(3, 3, 0.5), Grid(3, 3, 0.5)};
    for (double v : dasl::pixel_map(rescaled(Grid(3, 3, 0.0)), s).values) CHECK(v == 0.25);
  }
  SUBCASE("identical operands are idempotent") {
    Grid g(3, 4);
    for (auto& v : g.values) v = rng.uniform();
    const SemanticMaps s{Grid(3, 4), g};
    CHECK(dasl::pixel_map(rescaled(g), s) == g);
    CHECK(oasl::pixel_map(rescaled(g), s) == g);
  }
  SUBCASE("zero one-class map halves the residual") {
    Grid g(3, 4);
    for (auto& v : g.values) v = rng.uniform();
    const auto out = oasl::pixel_map(rescaled(g), SemanticMaps{Grid(3, 4, 1.0), Grid(3, 4, 0.0)});
    for (std::size_t k = 0; k < g.size(); ++k) CHECK(out.values[k] == g.values[k] / 2);
  }
  SUBCASE("random pairs match element-wise averaging") {
    for (int t = 0; t < 10; ++t) {
      Grid a(5, 5), b(5, 5);
      for (auto& v : a.values) v = rng.uniform();
      for (auto& v : b.values) v = rng.uniform();
      const auto p = dasl::pixel_map(rescaled(a), SemanticMaps{Grid(5, 5), b});
      const auto n = oasl::pixel_map(rescaled(a), SemanticMaps{Grid(5, 5), b});
      for (std::size_t k = 0; k < 25; ++k) {
        CHECK(std::abs(p.values[k] - 0.5 * (a.values[k] + b.values[k])) < 1e-15);
        CHECK(p.values[k] == n.values[k]);
      }
    }
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(dasl::pixel_map(rescaled(Grid(2, 2)), SemanticMaps{Grid(3, 3), Grid(3, 3)}), ShapeError);
  }
}
