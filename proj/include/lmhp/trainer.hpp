#ifndef LMHP_TRAINER_HPP
#define LMHP_TRAINER_HPP

// Stochastic training with per-sequence Adam steps. Each epoch:
//   for h in order: gradient of h's lazy terms using the previous epoch's
//   z_hat and the current u_hat; accumulate z_h; Adam step; update u_hat.
// then a closed-form step for never-active entities and z_hat <- this epoch's
// accumulated z. Reported log-likelihoods always use rebuilt caches.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <thread>
#include <utility>
#include <vector>

#include "lmhp/access.hpp"
#include "lmhp/adam.hpp"
#include "lmhp/lazy.hpp"
#include "lmhp/simulate.hpp"

namespace lmhp {

struct TrainConfig {
  std::size_t epochs = 10;
  double learning_rate = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t dim = 20;
  std::size_t threads = 1;
  std::uint64_t seed = 0;
  bool shuffle = false;
  std::size_t log_every = 1;

  AdamConfig adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_eps}; }

  void validate() const {
    if (epochs == 0) throw InvalidArgument("epochs must be >= 1");
    if (dim == 0) throw InvalidArgument("dim must be >= 1");
    if (threads == 0) throw InvalidArgument("threads must be >= 1");
    if (log_every == 0) throw InvalidArgument("log_every must be >= 1");
    adam().validate();
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loglik = 0.0;      ///< exact, under rebuilt caches
  double seconds = 0.0;     ///< training sweep only
  double u_hat_drift = 0.0; ///< max relative deviation of incremental u_hat from a rebuild
  double z_hat_lag = 0.0;   ///< max relative deviation of accumulated z from a rebuild
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t threads = 1;
  double initial_loglik = 0.0;
};

/// Thrown when an epoch produces a non-finite likelihood or gradient.
class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, ModelParams last_good, std::size_t epoch)
      : NumericalError(what), last_good_(std::move(last_good)), epoch_(epoch) {}
  const ModelParams& last_good() const noexcept { return last_good_; }
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  ModelParams last_good_;
  std::size_t epoch_;
};

/// Warm start: mu_x = (events of x) / (total observed time), beta = 1,
/// factor and self-excitation parameters ~ Normal(-2, 0.1).
inline ModelParams initial_params(const Dataset& data, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw InvalidArgument("dim must be >= 1");
  ModelParams p = ModelParams::zeros(data.num_entities(), dim);
  std::vector<std::size_t> counts(data.num_entities(), 0);
  for (const Sequence& seq : data.sequences())
    for (const Event& e : seq.events()) ++counts[e.entity];
  const double total = data.total_horizon();
  for (EntityId x = 0; x < data.num_entities(); ++x)
    p.theta_mu[x] = softplus_inverse(std::max(static_cast<double>(counts[x]), 0.1) / total);
  p.theta_beta = softplus_inverse(1.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(-2.0, 0.1);
  for (double& t : p.theta_self) t = normal(rng);
  for (double& t : p.theta_u) t = normal(rng);
  for (double& t : p.theta_v) t = normal(rng);
  return p;
}

namespace detail {

inline double max_relative_deviation(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double scale = std::max({std::abs(a[k]), std::abs(b[k]), 1e-300});
    worst = std::max(worst, std::abs(a[k] - b[k]) / scale);
  }
  return worst;
}

}  // namespace detail

class Trainer {
 public:
  Trainer(const Dataset& data, TrainConfig config, std::optional<ModelParams> init = std::nullopt)
      : data_(data), config_(config) {
    config_.validate();
    params_ = init ? std::move(*init) : initial_params(data, config_.dim, config_.seed);
    if (!params_.shape_valid() || params_.num_entities != data.num_entities())
      throw InvalidArgument("initial parameters do not match the dataset");
    config_.dim = params_.dim;
    caches_ = build_caches(params_, data_);
    adam_ = AdamState::zeros(params_.num_entities, params_.dim);
    order_.resize(data_.num_sequences());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }

  const ModelParams& params() const noexcept { return params_; }
  const LazyCaches& caches() const noexcept { return caches_; }
  const AdamState& adam() const noexcept { return adam_; }
  const TrainConfig& config() const noexcept { return config_; }
  std::size_t epochs_done() const noexcept { return epoch_; }

  /// Exact log-likelihood of the current parameters.
  double exact_loglik() const { return lazy_log_likelihood(params_, data_, build_caches(params_, data_)); }

  EpochRecord run_epoch() {
    ++epoch_;
    if (config_.shuffle) {
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      std::mt19937_64 rng(derive_seed(config_.seed, epoch_));
      std::shuffle(order_.begin(), order_.end(), rng);
    }
    const auto start = std::chrono::steady_clock::now();
    std::vector<long double> z_next(params_.dim, 0.0L);
    if (config_.threads == 1)
      sweep_sequential(z_next);
    else
      sweep_parallel(z_next);
    caches_.z_hat.assign(z_next.begin(), z_next.end());
    step_never_active();
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    EpochRecord rec;
    rec.epoch = epoch_;
    rec.seconds = seconds;
    const LazyCaches fresh = build_caches(params_, data_);
    rec.loglik = lazy_log_likelihood(params_, data_, fresh);
    rec.u_hat_drift = detail::max_relative_deviation(caches_.u_hat, fresh.u_hat);
    rec.z_hat_lag = detail::max_relative_deviation(caches_.z_hat, fresh.z_hat);
    return rec;
  }

 private:
  void sweep_sequential(std::vector<long double>& z_next) {
    const AdamConfig adam = config_.adam();
    std::vector<double> z(params_.dim);
    for (std::size_t h : order_) {
      kernel_.run(params_, data_, h, caches_, &grad_, z);
      for (std::size_t k = 0; k < z.size(); ++k) z_next[k] += z[k];
      adam_step(adam_, grad_, adam, params_, caches_.u_hat);
    }
  }

  // Lock-free: threads share params_, adam_ and caches_.u_hat through
  // relaxed atomic scalar accesses. z_hat is read-only during the sweep.
  void sweep_parallel(std::vector<long double>& z_next) {
    const std::size_t threads = std::min(config_.threads, std::max<std::size_t>(1, order_.size()));
    const AdamConfig adam = config_.adam();
    std::vector<std::vector<long double>> partial(threads, std::vector<long double>(params_.dim, 0.0L));
    std::vector<std::exception_ptr> errors(threads);
    auto work = [&](std::size_t tid) {
      try {
        LazySequenceKernel kernel;
        SparseGradient grad;
        std::vector<double> z(params_.dim);
        for (std::size_t i = tid; i < order_.size(); i += threads) {
          kernel.run<RelaxedAtomicAccess>(params_, data_, order_[i], caches_, &grad, z);
          for (std::size_t k = 0; k < z.size(); ++k) partial[tid][k] += z[k];
          adam_step<RelaxedAtomicAccess>(adam_, grad, adam, params_, caches_.u_hat);
        }
      } catch (...) {
        errors[tid] = std::current_exception();
      }
    };
    {
      std::vector<std::jthread> pool;
      for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    for (const auto& part : partial)
      for (std::size_t k = 0; k < part.size(); ++k) z_next[k] += part[k];
  }

  // Never-active entities only appear through mu_x T_total and u_x . z_hat.
  void step_never_active() {
    if (caches_.never_active.empty()) return;
    const AdamConfig adam = config_.adam();
    const std::size_t dim = params_.dim;
    never_active_gradient(params_, caches_, [&](EntityId x, double d_mu, std::span<const double> d_u) {
      detail::adam_block<PlainAccess>(adam, adam_.steps_mu[x], &params_.theta_mu[x],
                                      &adam_.first_moment.d_theta_mu[x], &adam_.second_moment.d_theta_mu[x],
                                      &d_mu, 1);
      detail::adam_block<PlainAccess>(adam, adam_.steps_u[x], &params_.theta_u[x * dim],
                                      &adam_.first_moment.d_theta_u[x * dim],
                                      &adam_.second_moment.d_theta_u[x * dim], d_u.data(), dim, caches_.u_hat);
    });
  }

  const Dataset& data_;
  TrainConfig config_;
  ModelParams params_;
  LazyCaches caches_;
  AdamState adam_;
  std::vector<std::size_t> order_;
  LazySequenceKernel kernel_;
  SparseGradient grad_;
  std::size_t epoch_ = 0;
};

struct TrainHooks {
  std::ostream* progress = nullptr;  ///< receives `epoch=<k> loglik=<v> secs=<t>`
  std::function<void(const ModelParams&, const EpochRecord&)> checkpoint;  ///< every log_every epochs
};

/// Runs config.epochs epochs. Sequential when config.threads == 1.
inline std::pair<ModelParams, TrainReport> train(const Dataset& data, const TrainConfig& config,
                                                 std::optional<ModelParams> init = std::nullopt,
                                                 const TrainHooks& hooks = {}) {
  Trainer trainer(data, config, std::move(init));
  TrainReport report;
  report.threads = config.threads;
  ModelParams last_good = trainer.params();
  try {
    report.initial_loglik = trainer.exact_loglik();
  } catch (const NumericalError& err) {
    throw TrainingDiverged(std::string("initial parameters invalid: ") + err.what(), std::move(last_good), 0);
  }
  for (std::size_t e = 0; e < config.epochs; ++e) {
    EpochRecord rec;
    try {
      rec = trainer.run_epoch();
    } catch (const NumericalError& err) {
      throw TrainingDiverged(std::string("training diverged: ") + err.what(), std::move(last_good), e + 1);
    }
    if (!std::isfinite(rec.loglik))
      throw TrainingDiverged("training diverged: non-finite log-likelihood", std::move(last_good), e + 1);
    last_good = trainer.params();
    report.epochs.push_back(rec);
    if (hooks.progress)
      *hooks.progress << "epoch=" << rec.epoch << " loglik=" << rec.loglik << " secs=" << rec.seconds << '\n';
    if (hooks.checkpoint && (rec.epoch % config.log_every == 0 || e + 1 == config.epochs))
      hooks.checkpoint(trainer.params(), rec);
  }
  return {trainer.params(), std::move(report)};
}

/// Hogwild training; requires config.threads >= 2.
inline std::pair<ModelParams, TrainReport> train_parallel(const Dataset& data, const TrainConfig& config,
                                                          std::optional<ModelParams> init = std::nullopt,
                                                          const TrainHooks& hooks = {}) {
  if (config.threads < 2) throw InvalidArgument("train_parallel needs threads >= 2");
  return train(data, config, std::move(init), hooks);
}

}  // namespace lmhp

#endif  // LMHP_TRAINER_HPP
