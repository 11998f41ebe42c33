#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "dla/errors.hpp"
#include "dla/losses.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dla;
using dla::testing::random_distribution;
using dla::testing::rel_err;

namespace {

Rows random_rows(Rng& rng, std::size_t n, std::size_t k) {
  Rows r;
  for (std::size_t i = 0; i < n; ++i) r.push_back(random_distribution(rng, k));
  return r;
}

Rows random_matrix(Rng& rng, std::size_t n, std::size_t d) {
  Rows r(n, std::vector<double>(d));
  for (auto& row : r)
    for (auto& v : row) v = rng.normal();
  return r;
}

Rows softmax_rows(const Rows& z) {
  Rows p = z;
  for (auto& row : p) {
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0;
    for (auto& v : row) s += (v = std::exp(v - mx));
    for (auto& v : row) v /= s;
  }
  return p;
}

// Gradient with respect to logits z given the gradient with respect to p = softmax(z).
Rows through_softmax(const Rows& p, const Rows& g) {
  Rows out = g;
  for (std::size_t r = 0; r < p.size(); ++r) {
    double dot = 0;
    for (std::size_t k = 0; k < p[r].size(); ++k) dot += p[r][k] * g[r][k];
    for (std::size_t k = 0; k < p[r].size(); ++k) out[r][k] = p[r][k] * (g[r][k] - dot);
  }
  return out;
}

// Central differences of f over every entry of x, compared to `grad`.
void check_gradient(Rows x, const Rows& grad, const std::function<double(const Rows&)>& f, double eps = 1e-6) {
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::size_t k = 0; k < x[r].size(); ++k) {
      const double orig = x[r][k];
      x[r][k] = orig + eps;
      const double up = f(x);
      x[r][k] = orig - eps;
      const double down = f(x);
      x[r][k] = orig;
      const double fd = (up - down) / (2 * eps);
      EXPECT_LT(rel_err(grad[r][k], fd, 1e-4), 1e-3) << "entry " << r << "," << k << " analytic " << grad[r][k]
                                                     << " numeric " << fd;
    }
}

}  // namespace

TEST(SoftKl, IdenticalRowsGiveZero) {
  Rng rng(1);
  const auto p = random_rows(rng, 4, 3);
  EXPECT_NEAR(soft_kl_distill(p, p).value, 0.0, 1e-15);
}

TEST(SoftKl, OneHotAgainstUniform) {
  EXPECT_NEAR(soft_kl_distill({{0.5, 0.5}}, {{1.0, 0.0}}).value, std::log(2.0), 1e-12);
}

TEST(SoftKl, EmptyRowsGiveZero) { EXPECT_EQ(soft_kl_distill({}, {}).value, 0.0); }

TEST(SoftKl, MatchesSummationOracle) {
  Rng rng(2);
  for (int it = 0; it < 50; ++it) {
    const auto q = random_rows(rng, 5, 4), p = random_rows(rng, 5, 4);
    EXPECT_NEAR(soft_kl_distill(q, p).value, oracle::kl_sum(q, p), 1e-8);
    EXPECT_NEAR(soft_kl_distill(q, p, KlDirection::StudentToPseudo).value, oracle::kl_sum(p, q), 1e-8);
    EXPECT_GE(soft_kl_distill(q, p).value, 0.0);
  }
}

TEST(SoftKl, RejectsUnnormalizedRows) {
  EXPECT_THROW(soft_kl_distill({{0.5, 0.6}}, {{0.5, 0.5}}), ContractViolation);
  EXPECT_THROW(soft_kl_distill({{0.5, 0.5}}, {}), ContractViolation);
}

TEST(SoftKl, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  for (auto dir : {KlDirection::PseudoToStudent, KlDirection::StudentToPseudo}) {
    const Rows z = random_matrix(rng, 3, 4);
    const Rows p = random_rows(rng, 3, 4);
    const Rows q = softmax_rows(z);
    const auto lg = soft_kl_distill(q, p, dir);
    check_gradient(z, through_softmax(q, lg.d_rows),
                   [&](const Rows& zz) { return soft_kl_distill(softmax_rows(zz), p, dir).value; });
  }
}

TEST(FeatureDistill, Examples) {
  FeatureEmbedding t{{1, 0}, {}}, s{{0, 0}, {}};
  EXPECT_NEAR(feature_distill(t, s).value, 0.5, 1e-15);
  EXPECT_EQ(feature_distill(t, t).value, 0.0);
  FeatureEmbedding bad{{1, 2, 3}, {}};
  EXPECT_THROW(feature_distill(t, bad), ContractViolation);
}

TEST(FeatureDistill, MatchesOracleAndGradient) {
  Rng rng(4);
  FeatureEmbedding t, s;
  for (int i = 0; i < 16; ++i) {
    t.image.push_back(rng.normal());
    s.image.push_back(rng.normal());
  }
  const auto lg = feature_distill(t, s);
  EXPECT_NEAR(lg.value, oracle::mse(t.image, s.image), 1e-10);
  check_gradient({s.image}, {lg.d_vec}, [&](const Rows& x) {
    FeatureEmbedding e{x[0], {}};
    return feature_distill(t, e).value;
  });
}

TEST(Entropy, Examples) {
  EXPECT_EQ(entropy_loss({{1, 0, 0}, {0, 1, 0}}).value, 0.0);
  EXPECT_NEAR(entropy_loss({{0.25, 0.25, 0.25, 0.25}}).value, std::log(4.0), 1e-12);
  EXPECT_EQ(entropy_loss({}).value, 0.0);
}

TEST(Entropy, MatchesOracleWithinBounds) {
  Rng rng(5);
  for (int it = 0; it < 50; ++it) {
    const auto p = random_rows(rng, 3, 5);
    const double v = entropy_loss(p).value;
    EXPECT_NEAR(v, oracle::entropy_sum(p), 1e-8);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, std::log(5.0) + 1e-12);
  }
}

TEST(Entropy, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  const Rows z = random_matrix(rng, 3, 5);
  const Rows p = softmax_rows(z);
  check_gradient(z, through_softmax(p, entropy_loss(p).d_rows),
                 [](const Rows& zz) { return entropy_loss(softmax_rows(zz)).value; });
}

TEST(Contrastive, SingleRowGivesZero) {
  EXPECT_EQ(contrastive_loss({{1, 2}}, {{3, 4}}).value, 0.0);
}

TEST(Contrastive, OrthonormalPairsMatchOracle) {
  const Rows e{{1, 0}, {0, 1}};
  EXPECT_NEAR(contrastive_loss(e, e, 1.0).value, oracle::info_nce(e, e, 1.0), 1e-12);
}

TEST(Contrastive, RandomMatchesOracle) {
  Rng rng(7);
  for (int it = 0; it < 20; ++it) {
    const auto t = random_matrix(rng, 6, 8), s = random_matrix(rng, 6, 8);
    EXPECT_NEAR(contrastive_loss(t, s, 0.07).value, oracle::info_nce(t, s, 0.07), 1e-7);
    EXPECT_NEAR(contrastive_loss(t, s, 0.5).value, oracle::info_nce(t, s, 0.5), 1e-7);
  }
}

TEST(Contrastive, ZeroNormRowRejected) {
  EXPECT_THROW(contrastive_loss({{1, 0}, {0, 1}}, {{0, 0}, {0, 1}}), ContractViolation);
}

TEST(Contrastive, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  const auto t = random_matrix(rng, 4, 5), s = random_matrix(rng, 4, 5);
  for (double temp : {0.07, 0.5}) {
    const auto lg = contrastive_loss(t, s, temp);
    check_gradient(s, lg.d_rows, [&](const Rows& x) { return contrastive_loss(t, x, temp).value; }, 1e-7);
  }
}

TEST(WeightFactor, Examples) {
  LossWeights w;
  EXPECT_EQ(weight_factor(Rows{{1, 0}}, 0, w), 1.0);
  EXPECT_EQ(weight_factor(Rows{}, 0, w), 1.0);
  EXPECT_EQ(weight_factor(Rows{}, 1000000, w), 4.0);
  EXPECT_NEAR(weight_factor(1.0, 10, w), 1.21, 1e-12);
  // Two uniform binary rows: mean entropy ln 2.
  EXPECT_NEAR(weight_factor(Rows{{0.5, 0.5}, {0.5, 0.5}}, 10, w), (1 + 0.1 * std::log(2.0)) * 1.1, 1e-12);
}

TEST(WeightFactor, MonotoneInEntropyAndCount) {
  LossWeights w;
  w.factor_cap = 1e9;
  Rng rng(9);
  for (int it = 0; it < 100; ++it) {
    const double a = rng.uniform(0.5, 1.0), b = rng.uniform(0.5, a);
    // Row {a, 1-a} has lower entropy than {b, 1-b} when a > b >= 0.5.
    const auto n = static_cast<std::size_t>(rng.uniform_int(0, 50));
    EXPECT_LE(weight_factor(Rows{{a, 1 - a}}, n, w), weight_factor(Rows{{b, 1 - b}}, n, w));
    EXPECT_LE(weight_factor(Rows{{a, 1 - a}}, n, w), weight_factor(Rows{{a, 1 - a}}, n + 1, w));
  }
}

TEST(Total, Examples) {
  LossWeights zero;
  zero.w = {0, 0, 0, 0, 0, 0};
  LossParts parts{3, 4, 5, 6, 7, 8};
  EXPECT_EQ(total(parts, 2.0, zero).total, 0.0);
  LossWeights ones;
  ones.w = {1, 1, 1, 1, 1, 1};
  EXPECT_EQ(total({1, 1, 1, 1, 1, 1}, 1.0, ones).total, 6.0);
}

TEST(Total, MatchesScalarOracleAndIsLinear) {
  Rng rng(10);
  for (int it = 0; it < 100; ++it) {
    LossWeights w;
    for (auto& x : w.w) x = rng.uniform(0, 2);
    LossParts p{rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 3),
                rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 3)};
    const double f = rng.uniform(1, 4);
    const auto lb = total(p, f, w);
    const auto v = p.as_array();
    double expect = 0;
    for (int i = 0; i < 6; ++i) expect += w.w[i] * v[i];
    expect *= f;
    EXPECT_NEAR(lb.total, expect, 1e-12);
    const auto coef = loss_coefficients(f, w);
    for (int i = 0; i < 6; ++i) {
      auto arr = v;
      arr[i] += 0.5;
      const LossParts q{arr[0], arr[1], arr[2], arr[3], arr[4], arr[5]};
      EXPECT_NEAR((total(q, f, w).total - lb.total) / 0.5, coef[i], 1e-9);
    }
  }
}

TEST(Total, NonFinitePartNamed) {
  LossParts p;
  p.entropy = NAN;
  try {
    total(p, 1.0, {});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("entropy"), std::string::npos);
  }
}

TEST(LossWeights, Validation) {
  LossWeights w;
  EXPECT_NO_THROW(w.validate());
  w.w[3] = -1;
  EXPECT_THROW(w.validate(), ConfigError);
  w = {};
  w.factor_cap = 0.5;
  EXPECT_THROW(w.validate(), ConfigError);
}
