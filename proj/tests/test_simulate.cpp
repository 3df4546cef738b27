#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lmhp/simulate.hpp"
#include "oracles.hpp"

using namespace lmhp;

namespace {

struct Fit {
  double slope;
};

Fit least_squares(const std::vector<double>& xs, const std::vector<double>& ys) {
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    n += 1;
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  return {(n * sxy - sx * sy) / (n * sxx - sx * sx)};
}

double frobenius_distance(const InfluenceMatrix& a, const InfluenceMatrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
  return std::sqrt(s);
}

HawkesTruth univariate(double mu, double a, double beta) {
  HawkesTruth t;
  t.mu = {mu};
  t.beta = beta;
  t.alpha.n = 1;
  t.alpha.values = {a};
  return t;
}

}  // namespace

TEST(ScaleFreeGraph, TwoNodesIsTheSeedGraph) {
  for (auto opt : {ScaleFreeOptions{}, ScaleFreeOptions{1.0, 0.0, 0.0, 0.0, 0.0},
                   ScaleFreeOptions{0.0, 0.5, 0.5, 1.0, 1.0}}) {
    DirectedGraph g = sample_scale_free_graph(2, 123, opt);
    EXPECT_EQ(g.num_nodes, 2u);
    ASSERT_EQ(g.edges.size(), 2u);
    EXPECT_EQ(g.edges[0], (std::pair<std::uint32_t, std::uint32_t>{0, 1}));
    EXPECT_EQ(g.edges[1], (std::pair<std::uint32_t, std::uint32_t>{1, 0}));
  }
}

TEST(ScaleFreeGraph, DeterministicUnderSeed) {
  EXPECT_EQ(sample_scale_free_graph(500, 9), sample_scale_free_graph(500, 9));
  EXPECT_NE(sample_scale_free_graph(500, 9), sample_scale_free_graph(500, 10));
}

TEST(ScaleFreeGraph, RejectsInvalidProbabilities) {
  EXPECT_THROW(sample_scale_free_graph(10, 1, {0.5, 0.5, 0.5, 0.2, 0.0}), InvalidArgument);
  EXPECT_THROW(sample_scale_free_graph(10, 1, {-0.1, 0.6, 0.5, 0.2, 0.0}), InvalidArgument);
  EXPECT_THROW(sample_scale_free_graph(1, 1), InvalidArgument);
}

TEST(ScaleFreeGraph, InDegreeIsHeavyTailed) {
  DirectedGraph g = sample_scale_free_graph(10000, 2024);
  EXPECT_EQ(g.num_nodes, 10000u);
  const auto deg = g.in_degree();
  // Log-binned density over bins [2^i, 2^{i+1}).
  std::vector<double> bins(32, 0.0);
  for (std::size_t d : deg)
    if (d > 0) bins[static_cast<std::size_t>(std::floor(std::log2(static_cast<double>(d))))] += 1.0;
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < bins.size(); ++i) {
    if (bins[i] < 5) continue;
    const double width = std::pow(2.0, static_cast<double>(i));
    xs.push_back(std::log(width * std::sqrt(2.0)));
    ys.push_back(std::log(bins[i] / width / static_cast<double>(deg.size())));
  }
  const double density_slope = least_squares(xs, ys).slope;
  EXPECT_GE(density_slope, -3.5);
  EXPECT_LE(density_slope, -1.5);

  // Empirical CCDF slope is one higher than the density exponent.
  std::vector<std::size_t> sorted(deg.begin(), deg.end());
  std::sort(sorted.begin(), sorted.end());
  xs.clear();
  ys.clear();
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] == 0 || (i > 0 && sorted[i] == sorted[i - 1])) continue;
    xs.push_back(std::log(static_cast<double>(sorted[i])));
    ys.push_back(std::log(static_cast<double>(sorted.size() - i) / static_cast<double>(sorted.size())));
  }
  const double ccdf_slope = least_squares(xs, ys).slope;
  EXPECT_LT(ccdf_slope, -0.5);
  EXPECT_GT(ccdf_slope, -1.5);
}

TEST(InfluenceMatrix, FromGraphIsZeroOne) {
  DirectedGraph g;
  g.num_nodes = 3;
  g.edges = {{0, 1}, {0, 1}, {2, 0}, {1, 1}};
  InfluenceMatrix m = influence_from_graph(g);
  EXPECT_EQ(m.at(1, 0), 1.0);  // 0 -> 1: events at 0 excite 1
  EXPECT_EQ(m.at(0, 2), 1.0);
  EXPECT_EQ(m.at(1, 1), 1.0);
  EXPECT_EQ(m.at(0, 1), 0.0);
  double total = 0.0;
  for (double v : m.values) total += v;
  EXPECT_EQ(total, 3.0);
}

TEST(LowRank, FullRankReturnsInput) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  InfluenceMatrix m;
  m.n = 12;
  for (std::size_t i = 0; i < 144; ++i) m.values.push_back(unit(rng));
  InfluenceMatrix r = low_rank_approximation(m, 12);
  double norm = 0.0;
  for (double v : m.values) norm += v * v;
  EXPECT_LE(frobenius_distance(m, r) / std::sqrt(norm), 1e-8);
}

TEST(LowRank, RankOneRecoveredExactly) {
  InfluenceMatrix m;
  m.n = 6;
  const std::vector<double> a{1, 2, 0, 3, 0.5, 4}, b{0.2, 0, 1, 1, 2, 0.3};
  for (double ai : a)
    for (double bj : b) m.values.push_back(ai * bj);
  InfluenceMatrix r = low_rank_approximation(m, 1);
  double norm = 0.0;
  for (double v : m.values) norm += v * v;
  EXPECT_LE(frobenius_distance(m, r) / std::sqrt(norm), 1e-8);
}

TEST(LowRank, ErrorMonotoneInRankAndNonNegative) {
  std::mt19937_64 rng(6);
  std::bernoulli_distribution coin(0.3);
  InfluenceMatrix m;
  m.n = 50;
  for (std::size_t i = 0; i < 2500; ++i) m.values.push_back(coin(rng) ? 1.0 : 0.0);
  const InfluenceMatrix r9 = low_rank_approximation(m, 9);
  const InfluenceMatrix r10 = low_rank_approximation(m, 10);
  EXPECT_LE(frobenius_distance(m, r10), frobenius_distance(m, r9));
  for (double v : r10.values) EXPECT_GE(v, 0.0);
  EXPECT_THROW(low_rank_approximation(m, 0), InvalidArgument);
  EXPECT_THROW(low_rank_approximation(m, 51), InvalidArgument);
}

TEST(Stability, RescaleBoundsSpectralRadius) {
  InfluenceMatrix m = influence_from_graph(sample_scale_free_graph(50, 3));
  InfluenceMatrix r = rescale_for_stability(m, 2.0);
  EXPECT_LE(spectral_radius(r) / 2.0, 0.8 + 1e-12);
  HawkesTruth unstable{std::vector<double>(50, 0.1), 1.0, m};
  if (spectral_radius(m) >= 1.0) {
    EXPECT_THROW(thinning_sample(unstable, 10.0, 1), UnstableConfiguration);
  }
  EXPECT_THROW(thinning_sample(univariate(0.5, 1.2, 1.0), 10.0, 1), UnstableConfiguration);
}

TEST(Thinning, ZeroAlphaIsHomogeneousPoisson) {
  HawkesTruth t;
  t.mu = {0.2, 0.5, 0.3};
  t.beta = 1.0;
  t.alpha.n = 3;
  t.alpha.values.assign(9, 0.0);
  const double horizon = 10.0, rate = 1.0;
  double sum = 0.0;
  const int seeds = 2000;
  for (int s = 0; s < seeds; ++s) sum += static_cast<double>(thinning_sample(t, horizon, s).size());
  const double mean = sum / seeds;
  const double se = std::sqrt(horizon * rate / seeds);
  EXPECT_NEAR(mean, horizon * rate, 3 * se);
}

TEST(Thinning, ZeroBaselineGivesEmptySequence) {
  HawkesTruth t = univariate(0.0, 0.5, 1.0);
  EXPECT_TRUE(thinning_sample(t, 100.0, 4).empty());
}

TEST(Thinning, UnivariateMeanCountMatchesBranchingFormula) {
  const HawkesTruth t = univariate(0.5, 0.8, 1.0);
  double sum = 0.0;
  for (int s = 0; s < 200; ++s) sum += static_cast<double>(thinning_sample(t, 1000.0, derive_seed(77, s)).size());
  EXPECT_NEAR(sum / 200.0, 2500.0, 0.05 * 2500.0);
}

TEST(Thinning, DeterministicAndThreadIndependent) {
  const HawkesTruth t = make_synthetic_truth(20, 1.0, 0.01, 0, 8);
  const Sequence a = thinning_sample(t, 50.0, 3), b = thinning_sample(t, 50.0, 3);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.events()[i], b.events()[i]);
  EXPECT_EQ(simulate_dataset(t, 40, 50.0, 11, 1), simulate_dataset(t, 40, 50.0, 11, 3));
}

TEST(TimeRescaling, PoissonRateOneGivesInterEventTimes) {
  const HawkesTruth t = univariate(1.0, 0.0, 1.0);
  const Sequence seq = thinning_sample(t, 200.0, 5);
  const auto res = time_rescaling_residuals(t, seq);
  ASSERT_EQ(res.size(), seq.size());
  double prev = 0.0;
  for (std::size_t i = 0; i < res.size(); ++i) {
    EXPECT_NEAR(res[i], seq.events()[i].time - prev, 1e-12);
    prev = seq.events()[i].time;
  }
}

TEST(TimeRescaling, FactorizedAndDenseRoutesAgree) {
  std::mt19937_64 rng(12);
  ModelParams p = lmhp::testing::random_params(6, 3, rng);
  const Sequence seq = lmhp::testing::random_sequence(6, 40, 6, 30.0, rng);
  const auto a = time_rescaling_residuals(p, seq);
  const auto b = time_rescaling_residuals(to_truth(p), seq);
  ASSERT_EQ(a.size(), b.size());
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(lmhp::testing::rel_close(a[i], b[i], 1e-10));
    total += a[i];
  }
  // The increments telescope to the pooled compensator at the last event.
  if (!seq.empty()) {
    const Sequence clipped({seq.events().begin(), seq.events().end()}, seq.events().back().time);
    double pooled = 0.0;
    for (EntityId x = 0; x < 6; ++x) pooled += compensator(p, clipped, x);
    EXPECT_TRUE(lmhp::testing::rel_close(total, pooled, 1e-10));
  }
}

TEST(TimeRescaling, KolmogorovSmirnovAcceptsTruthRejectsWrongBeta) {
  const HawkesTruth truth = make_synthetic_truth(10, 1.0, 0.05, 0, 21);
  const Dataset data = simulate_dataset(truth, 100, 100.0, 99);
  HawkesTruth wrong = truth;
  wrong.beta *= 2.0;
  std::vector<double> good, bad;
  for (const Sequence& seq : data.sequences()) {
    for (double r : time_rescaling_residuals(truth, seq)) good.push_back(r);
    for (double r : time_rescaling_residuals(wrong, seq)) bad.push_back(r);
  }
  ASSERT_GT(good.size(), 1000u);
  const double critical = ks_critical_value(good.size(), 0.01);
  EXPECT_LT(ks_statistic_exponential(good), critical);
  EXPECT_GT(ks_statistic_exponential(bad), critical);
}

TEST(KolmogorovSmirnov, CriticalValueMatchesTable) {
  // Large-sample 1% quantile of the Kolmogorov distribution is 1.6276.
  EXPECT_NEAR(ks_critical_value(1000000, 0.01) * 1000.0, 1.6276, 1e-3);
  EXPECT_THROW(ks_statistic_exponential({}), InvalidArgument);
}
