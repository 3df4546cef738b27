#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "lmhp/trainer.hpp"
#include "oracles.hpp"

using namespace lmhp;
using lmhp::testing::rel_close;

namespace {

SparseGradient gradient_for(std::vector<EntityId> entities, std::size_t dim, double value) {
  SparseGradient g;
  g.reset(entities, dim);
  std::fill(g.d_theta_mu.begin(), g.d_theta_mu.end(), value);
  std::fill(g.d_theta_self.begin(), g.d_theta_self.end(), value);
  std::fill(g.d_theta_u.begin(), g.d_theta_u.end(), value);
  std::fill(g.d_theta_v.begin(), g.d_theta_v.end(), value);
  g.d_theta_beta = value;
  return g;
}

Dataset poisson_data(double rate, std::size_t sequences, double horizon, std::uint64_t seed) {
  HawkesTruth t;
  t.mu = {rate};
  t.beta = 1.0;
  t.alpha.n = 1;
  t.alpha.values = {0.0};
  return simulate_dataset(t, sequences, horizon, seed);
}

Dataset small_synthetic(std::size_t nodes, std::size_t sequences, std::uint64_t seed) {
  return simulate_dataset(make_synthetic_truth(nodes, 1.0, 0.002, 0, seed), sequences, 100.0, seed + 1);
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  std::mt19937_64 rng(1);
  ModelParams p = lmhp::testing::random_params(4, 3, rng);
  const ModelParams before = p;
  AdamState s = AdamState::zeros(4, 3);
  for (int i = 0; i < 10; ++i) adam_step(s, gradient_for({0, 1, 2, 3}, 3, 0.0), AdamConfig{}, p);
  EXPECT_EQ(p, before);
}

TEST(Adam, ConstantGradientStepApproachesLearningRate) {
  const AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
  for (double g : {3.5, -0.2}) {
    ModelParams p = ModelParams::zeros(1, 1);
    AdamState s = AdamState::zeros(1, 1);
    double previous = p.theta_beta;
    double last_step = 0.0;
    for (int i = 0; i < 1000; ++i) {
      adam_step(s, gradient_for({0}, 1, g), cfg, p);
      last_step = p.theta_beta - previous;
      previous = p.theta_beta;
    }
    EXPECT_NEAR(last_step, cfg.learning_rate * (g > 0 ? 1.0 : -1.0), 0.01 * cfg.learning_rate);
  }
}

TEST(Adam, UntouchedEntityKeepsParametersAndMoments) {
  std::mt19937_64 rng(2);
  ModelParams p = lmhp::testing::random_params(5, 2, rng);
  const ModelParams before = p;
  AdamState s = AdamState::zeros(5, 2);
  adam_step(s, gradient_for({1, 3}, 2, 0.7), AdamConfig{}, p);
  for (EntityId x : {0u, 2u, 4u}) {
    EXPECT_EQ(p.theta_mu[x], before.theta_mu[x]);
    EXPECT_EQ(p.theta_self[x], before.theta_self[x]);
    EXPECT_EQ(s.first_moment.d_theta_mu[x], 0.0);
    EXPECT_EQ(s.second_moment.d_theta_mu[x], 0.0);
    EXPECT_EQ(s.steps_mu[x], 0u);
    EXPECT_EQ(s.steps_u[x], 0u);
    for (std::size_t k = 0; k < 2; ++k) {
      EXPECT_EQ(p.theta_u[x * 2 + k], before.theta_u[x * 2 + k]);
      EXPECT_EQ(p.theta_v[x * 2 + k], before.theta_v[x * 2 + k]);
      EXPECT_EQ(s.first_moment.d_theta_u[x * 2 + k], 0.0);
    }
  }
  EXPECT_EQ(s.steps_mu[1], 1u);
  EXPECT_EQ(s.steps_beta, 1u);
  for (double v : s.second_moment.d_theta_u) EXPECT_GE(v, 0.0);
}

TEST(Adam, TracksUHatUnderUpdates) {
  std::mt19937_64 rng(3);
  ModelParams p = lmhp::testing::random_params(6, 4, rng);
  std::vector<double> u_hat = compute_u_hat(p);
  AdamState s = AdamState::zeros(6, 4);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    SparseGradient g = gradient_for({static_cast<EntityId>(i % 6), static_cast<EntityId>((i * 7 + 1) % 6)}, 4, 0.0);
    if (g.entities[0] == g.entities[1]) g = gradient_for({g.entities[0]}, 4, 0.0);
    for (double& v : g.d_theta_u) v = normal(rng);
    adam_step(s, g, AdamConfig{0.05}, p, u_hat);
  }
  const auto rebuilt = compute_u_hat(p);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_TRUE(rel_close(u_hat[k], rebuilt[k], 1e-12));
}

TEST(Trainer, RecoversPoissonRate) {
  const double rate = 0.5;
  const Dataset data = poisson_data(rate, 20, 50.0, 4);
  const double empirical = static_cast<double>(data.num_events()) / data.total_horizon();
  ModelParams init = initial_params(data, 2, 0);
  init.theta_mu[0] = softplus_inverse(3.0 * empirical);  // start far from the MLE
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.dim = 2;
  const auto [params, report] = train(data, cfg, init);
  EXPECT_NEAR(params.mu(0), empirical, 0.1 * empirical);
  EXPECT_GT(report.epochs.back().loglik, report.initial_loglik);
}

TEST(Trainer, SequentialRunsAreBitIdentical) {
  const Dataset data = small_synthetic(15, 60, 5);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.dim = 4;
  cfg.seed = 7;
  cfg.shuffle = true;
  const auto a = train(data, cfg);
  const auto b = train(data, cfg);
  EXPECT_EQ(a.first, b.first);
  cfg.seed = 8;
  EXPECT_NE(a.first, train(data, cfg).first);
}

TEST(Trainer, LaggedZHatExactWithZeroLearningRate) {
  const Dataset data = small_synthetic(12, 40, 6);
  auto lag_after_epoch = [&](double lr) {
    TrainConfig cfg;
    cfg.dim = 3;
    cfg.learning_rate = lr;
    Trainer t(data, cfg);
    t.run_epoch();
    return t.run_epoch().z_hat_lag;
  };
  const double frozen = lag_after_epoch(0.0);
  const double slow = lag_after_epoch(1e-4);
  const double fast = lag_after_epoch(1e-2);
  EXPECT_LE(frozen, 1e-12);
  EXPECT_LT(slow, fast);
}

TEST(Trainer, IncrementalUHatMatchesRebuild) {
  const Dataset data = small_synthetic(30, 100, 7);
  TrainConfig cfg;
  cfg.dim = 5;
  cfg.learning_rate = 0.05;
  Trainer t(data, cfg);
  for (int e = 0; e < 3; ++e) EXPECT_LE(t.run_epoch().u_hat_drift, 1e-10);
}

TEST(Trainer, LikelihoodTrendIsNonDecreasing) {
  const Dataset data = small_synthetic(20, 200, 8);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.dim = 4;
  const auto [params, report] = train(data, cfg);
  double best = report.initial_loglik;
  for (const EpochRecord& r : report.epochs) {
    EXPECT_TRUE(std::isfinite(r.loglik));
    EXPECT_GE(r.loglik, best - 0.005 * std::abs(best)) << "epoch " << r.epoch;
    best = std::max(best, r.loglik);
  }
  EXPECT_GT(report.epochs.back().loglik, report.initial_loglik);
}

TEST(Trainer, OneStepTouchesOnlyActiveEntities) {
  const Dataset data = small_synthetic(40, 30, 9);
  std::size_t h = 0;
  while (data.active_entities(h).empty()) ++h;
  ModelParams p = initial_params(data, 3, 1);
  const ModelParams before = p;
  LazyCaches caches = build_caches(p, data);
  LazySequenceKernel kernel;
  SparseGradient g;
  EngineStats stats;
  kernel.run(p, data, h, caches, &g, {}, &stats);
  AdamState s = AdamState::zeros(40, 3);
  adam_step(s, g, AdamConfig{}, p, caches.u_hat);
  const auto active = data.active_entities(h);
  EXPECT_EQ(stats.entity_touches, active.size());
  for (EntityId x = 0; x < 40; ++x) {
    const bool is_active = std::find(active.begin(), active.end(), x) != active.end();
    if (is_active) continue;
    EXPECT_EQ(p.theta_mu[x], before.theta_mu[x]);
    EXPECT_EQ(p.theta_self[x], before.theta_self[x]);
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_EQ(p.theta_u[x * 3 + k], before.theta_u[x * 3 + k]);
      EXPECT_EQ(p.theta_v[x * 3 + k], before.theta_v[x * 3 + k]);
    }
  }
  EXPECT_NE(p.theta_beta, before.theta_beta);
}

TEST(Trainer, DivergenceReportsLastGoodSnapshot) {
  const Dataset data = poisson_data(0.5, 5, 20.0, 10);
  ModelParams init = initial_params(data, 2, 0);
  init.theta_mu[0] = -800.0;  // zero baseline: first event has zero intensity
  init.theta_self[0] = -800.0;
  TrainConfig cfg;
  cfg.dim = 2;
  try {
    train(data, cfg, init);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.epoch(), 0u);  // the initial evaluation already fails
    EXPECT_EQ(e.last_good(), init);
  }
}

TEST(Trainer, ProgressLinesAndCheckpoints) {
  const Dataset data = poisson_data(0.5, 5, 20.0, 11);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.dim = 2;
  cfg.log_every = 2;
  std::ostringstream out;
  std::vector<std::size_t> checkpointed;
  TrainHooks hooks;
  hooks.progress = &out;
  hooks.checkpoint = [&](const ModelParams&, const EpochRecord& r) { checkpointed.push_back(r.epoch); };
  train(data, cfg, std::nullopt, hooks);
  EXPECT_EQ(checkpointed, (std::vector<std::size_t>{2, 4}));
  std::istringstream lines(out.str());
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    ++count;
    EXPECT_EQ(line.rfind("epoch=" + std::to_string(count) + " loglik=", 0), 0u) << line;
    EXPECT_NE(line.find(" secs="), std::string::npos);
  }
  EXPECT_EQ(count, 4u);
}

TEST(Trainer, RejectsInvalidConfig) {
  const Dataset data = poisson_data(0.5, 2, 10.0, 12);
  TrainConfig cfg;
  cfg.dim = 0;
  EXPECT_THROW(train(data, cfg), InvalidArgument);
  cfg.dim = 2;
  cfg.adam_beta1 = 1.0;
  EXPECT_THROW(train(data, cfg), InvalidArgument);
  cfg.adam_beta1 = 0.9;
  EXPECT_THROW(train_parallel(data, cfg), InvalidArgument);
}

TEST(TrainParallel, MatchesSequentialQuality) {
  const Dataset data = simulate_dataset(make_synthetic_truth(50, 1.0, 1e-3, 0, 13), 500, 100.0, 14);
  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.dim = 4;
  const auto seq = train(data, cfg);
  cfg.threads = 4;
  const auto par = train_parallel(data, cfg);
  EXPECT_EQ(par.second.threads, 4u);
  const double a = seq.second.epochs.back().loglik, b = par.second.epochs.back().loglik;
  EXPECT_LE(std::abs(a - b), 0.01 * std::abs(a));
  for (const EpochRecord& r : par.second.epochs) EXPECT_LE(r.u_hat_drift, 1e-4) << "epoch " << r.epoch;
}
