#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "lmhp/dense.hpp"
#include "oracles.hpp"

using namespace lmhp;
using lmhp::testing::rel_close;

TEST(DenseLogLikelihood, EmptySequenceIsBaselineOnly) {
  std::mt19937_64 rng(1);
  ModelParams p = lmhp::testing::random_params(4, 2, rng);
  Dataset data(4, {Sequence({}, 7.0)});
  double mu_sum = 0.0;
  for (EntityId x = 0; x < 4; ++x) mu_sum += p.mu(x);
  EXPECT_TRUE(rel_close(dense_log_likelihood(p, data), -7.0 * mu_sum, 1e-14));
}

TEST(DenseLogLikelihood, SingleEntitySingleEvent) {
  ModelParams p = ModelParams::zeros(1, 2);
  p.theta_mu[0] = -0.3;
  p.theta_self[0] = -1.1;
  p.theta_beta = 0.4;
  const double t1 = 1.25, horizon = 6.0;
  Dataset data(1, {Sequence({{0, t1}}, horizon)});
  const double mu = softplus(-0.3), a11 = softplus(-1.1), beta = softplus(0.4);
  const double expected = std::log(mu) - mu * horizon - a11 / beta * (1.0 - std::exp(-beta * (horizon - t1)));
  EXPECT_TRUE(rel_close(dense_log_likelihood(p, data), expected, 1e-13));
}

TEST(DenseLogLikelihood, MatchesNaiveDoubleLoop) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    std::uniform_int_distribution<std::size_t> n_dist(1, 20), d_dist(1, 5), h_dist(1, 6);
    const std::size_t n = n_dist(rng), d = d_dist(rng);
    ModelParams p = lmhp::testing::random_params(n, d, rng);
    Dataset data = lmhp::testing::random_dataset(n, h_dist(rng), 50, n, rng);
    const double naive = lmhp::testing::naive_log_likelihood(p, data);
    EXPECT_TRUE(rel_close(dense_log_likelihood(p, data), naive, 1e-10))
        << "trial " << trial << ": " << dense_log_likelihood(p, data) << " vs " << naive;
  }
}

TEST(DenseLogLikelihood, RejectsEmptyDatasetAndShapeMismatch) {
  ModelParams p = ModelParams::zeros(3, 2);
  EXPECT_THROW(dense_log_likelihood(p, Dataset(3, {})), InvalidArgument);
  EXPECT_THROW(dense_log_likelihood(p, Dataset(4, {Sequence({}, 1.0)})), InvalidArgument);
}

TEST(DenseLogLikelihood, InvariantUnderSequenceReordering) {
  std::mt19937_64 rng(31);
  ModelParams p = lmhp::testing::random_params(9, 3, rng);
  Dataset data = lmhp::testing::random_dataset(9, 25, 15, 4, rng);
  std::vector<Sequence> shuffled(data.sequences().begin(), data.sequences().end());
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  Dataset permuted(9, shuffled);
  EXPECT_EQ(dense_log_likelihood(p, data), dense_log_likelihood(p, permuted));
}

TEST(DenseLogLikelihood, ReportsUnderflowedIntensity) {
  ModelParams p = ModelParams::zeros(1, 1);
  p.theta_mu[0] = -800.0;  // softplus underflows to 0
  p.theta_self[0] = -800.0;
  Dataset data(1, {Sequence({{0, 1.0}}, 2.0)});
  EXPECT_THROW(dense_log_likelihood(p, data), NumericalError);
}

TEST(DenseGradient, EmptySequenceOnlyBaselineSurvives) {
  std::mt19937_64 rng(6);
  ModelParams p = lmhp::testing::random_params(3, 2, rng);
  Dataset data(3, {Sequence({}, 5.0)});
  GradientBuffer g = dense_gradient(p, data);
  for (EntityId x = 0; x < 3; ++x) {
    EXPECT_TRUE(rel_close(g.d_theta_mu[x], -5.0 * softplus_grad(p.theta_mu[x]), 1e-14));
    EXPECT_EQ(g.d_theta_self[x], 0.0);
    for (std::size_t k = 0; k < 2; ++k) {
      EXPECT_EQ(g.d_theta_v[x * 2 + k], 0.0);
      // u only enters through excitation terms, of which there are none.
      EXPECT_EQ(g.d_theta_u[x * 2 + k], 0.0);
    }
  }
  EXPECT_EQ(g.d_theta_beta, 0.0);
}

namespace {

void expect_gradients_close(const GradientBuffer& a, const GradientBuffer& b, double rel, double floor) {
  ASSERT_EQ(a.d_theta_u.size(), b.d_theta_u.size());
  EXPECT_TRUE(rel_close(a.d_theta_beta, b.d_theta_beta, rel, floor)) << a.d_theta_beta << " vs " << b.d_theta_beta;
  for (std::size_t i = 0; i < a.d_theta_mu.size(); ++i) {
    EXPECT_TRUE(rel_close(a.d_theta_mu[i], b.d_theta_mu[i], rel, floor)) << "mu " << i << ": " << a.d_theta_mu[i] << " vs " << b.d_theta_mu[i];
    EXPECT_TRUE(rel_close(a.d_theta_self[i], b.d_theta_self[i], rel, floor)) << "self " << i << ": " << a.d_theta_self[i] << " vs " << b.d_theta_self[i];
  }
  for (std::size_t i = 0; i < a.d_theta_u.size(); ++i) {
    EXPECT_TRUE(rel_close(a.d_theta_u[i], b.d_theta_u[i], rel, floor)) << "u " << i << ": " << a.d_theta_u[i] << " vs " << b.d_theta_u[i];
    EXPECT_TRUE(rel_close(a.d_theta_v[i], b.d_theta_v[i], rel, floor)) << "v " << i << ": " << a.d_theta_v[i] << " vs " << b.d_theta_v[i];
  }
}

}  // namespace

TEST(DenseGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 5; ++trial) {
    ModelParams p = lmhp::testing::random_params(8, 3, rng);
    Dataset data = lmhp::testing::random_dataset(8, 4, 12, 5, rng);
    const GradientBuffer analytic = dense_gradient(p, data);
    const GradientBuffer fd = lmhp::testing::finite_difference_gradient(
        p, [&](const ModelParams& q) { return lmhp::testing::naive_log_likelihood(q, data); }, 1e-5);
    // Absolute floor at the finite-difference round-off level.
    expect_gradients_close(analytic, fd, 1e-4, 1e-6);
  }
}

TEST(DenseGradient, BitIdenticalUnderSequencePermutation) {
  std::mt19937_64 rng(8);
  ModelParams p = lmhp::testing::random_params(7, 2, rng);
  Dataset data = lmhp::testing::random_dataset(7, 20, 10, 3, rng);
  std::vector<Sequence> shuffled(data.sequences().begin(), data.sequences().end());
  std::reverse(shuffled.begin(), shuffled.end());
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const GradientBuffer a = dense_gradient(p, data);
  const GradientBuffer b = dense_gradient(p, Dataset(7, shuffled));
  EXPECT_EQ(a.d_theta_mu, b.d_theta_mu);
  EXPECT_EQ(a.d_theta_self, b.d_theta_self);
  EXPECT_EQ(a.d_theta_u, b.d_theta_u);
  EXPECT_EQ(a.d_theta_v, b.d_theta_v);
  EXPECT_EQ(a.d_theta_beta, b.d_theta_beta);
}

TEST(DenseGradient, TouchesEveryEntityPerSequence) {
  std::mt19937_64 rng(9);
  ModelParams p = lmhp::testing::random_params(30, 2, rng);
  Dataset data = lmhp::testing::random_dataset(30, 5, 4, 2, rng);
  EngineStats stats;
  dense_gradient(p, data, &stats);
  EXPECT_EQ(stats.entity_touches, 30u * 5u);
}
