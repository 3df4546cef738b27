#ifndef LMHP_EVAL_HPP
#define LMHP_EVAL_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "lmhp/dense.hpp"
#include "lmhp/io.hpp"
#include "lmhp/lazy.hpp"
#include "lmhp/simulate.hpp"
#include "lmhp/trainer.hpp"

namespace lmhp {

struct RecoveryReport {
  double rmse_mu = 0.0;
  double rmse_beta = 0.0;
  double rmse_alpha = 0.0;  ///< over all ordered pairs, diagonal included
  double loglik = std::numeric_limits<double>::quiet_NaN();
  std::size_t num_entities = 0;
  std::size_t dim = 0;
};

/// RMSE of natural-scale parameters against a ground truth.
inline RecoveryReport rmse_params(const ModelParams& est, const HawkesTruth& truth) {
  const std::size_t n = est.num_entities;
  if (truth.num_entities() != n || truth.alpha.n != n || !est.shape_valid())
    throw InvalidArgument("estimated and true parameters have different shapes");
  RecoveryReport r;
  r.num_entities = n;
  r.dim = est.dim;
  long double mu = 0.0L, a = 0.0L;
  for (EntityId x = 0; x < n; ++x) {
    const double dm = est.mu(x) - truth.mu[x];
    mu += dm * dm;
    for (EntityId y = 0; y < n; ++y) {
      const double da = alpha(est, x, y) - truth.alpha.at(x, y);
      a += da * da;
    }
  }
  r.rmse_mu = std::sqrt(static_cast<double>(mu / static_cast<long double>(n)));
  r.rmse_beta = std::abs(est.beta() - truth.beta);
  r.rmse_alpha = std::sqrt(static_cast<double>(a / static_cast<long double>(n * n)));
  return r;
}

enum class Engine { dense, lazy };

inline const char* engine_name(Engine e) { return e == Engine::dense ? "dense" : "lazy"; }

/// Exact log-likelihood divided by the number of events.
inline double holdout_loglik(const ModelParams& params, const Dataset& data, Engine engine = Engine::lazy) {
  if (data.num_events() == 0) throw InvalidArgument("held-out data has no events");
  const double total = engine == Engine::dense ? dense_log_likelihood(params, data)
                                               : lazy_log_likelihood(params, data, build_caches(params, data));
  return total / static_cast<double>(data.num_events());
}

struct TimingRecord {
  Engine engine = Engine::lazy;
  std::size_t repetitions = 0;
  std::size_t threads = 1;
  double median_seconds = 0.0;
  double min_seconds = 0.0;
  double max_seconds = 0.0;
  std::uint64_t entity_touches = 0;  ///< per gradient pass
  std::vector<double> samples;
};

/// Wall-clock of full-dataset gradient passes. The lazy pass includes
/// building its caches.
inline TimingRecord runtime_benchmark(Engine engine, const ModelParams& params, const Dataset& data,
                                      std::size_t repetitions) {
  if (repetitions == 0) throw InvalidArgument("repetitions must be >= 1");
  TimingRecord rec;
  rec.engine = engine;
  rec.repetitions = repetitions;
  volatile double sink = 0.0;
  for (std::size_t i = 0; i < repetitions; ++i) {
    EngineStats stats;
    const auto start = std::chrono::steady_clock::now();
    GradientBuffer g = engine == Engine::dense ? dense_gradient(params, data, &stats)
                                               : lazy_gradient(params, data, build_caches(params, data), {}, &stats);
    rec.samples.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    sink = sink + g.d_theta_beta;
    rec.entity_touches = stats.entity_touches;
  }
  std::vector<double> sorted = rec.samples;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  rec.median_seconds = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  rec.min_seconds = sorted.front();
  rec.max_seconds = sorted.back();
  return rec;
}

inline void write_recovery_tsv(std::ostream& out, const RecoveryReport& r) {
  out << "num_entities\tdim\trmse_mu\trmse_beta\trmse_alpha\tloglik\n";
  out << r.num_entities << '\t' << r.dim << '\t' << detail::format_real(r.rmse_mu) << '\t'
      << detail::format_real(r.rmse_beta) << '\t' << detail::format_real(r.rmse_alpha) << '\t'
      << detail::format_real(r.loglik) << '\n';
}

inline void write_timing_tsv(std::ostream& out, const std::vector<TimingRecord>& records, std::size_t num_entities,
                             std::size_t num_sequences) {
  out << "engine\tnum_entities\tnum_sequences\tthreads\trepetitions\tmedian_s\tmin_s\tmax_s\tentity_touches\n";
  for (const TimingRecord& r : records)
    out << engine_name(r.engine) << '\t' << num_entities << '\t' << num_sequences << '\t' << r.threads << '\t'
        << r.repetitions << '\t' << detail::format_real(r.median_seconds) << '\t'
        << detail::format_real(r.min_seconds) << '\t' << detail::format_real(r.max_seconds) << '\t'
        << r.entity_touches << '\n';
}

inline void write_train_report_tsv(std::ostream& out, const TrainReport& report) {
  out << "epoch\tloglik\tsecs\tu_hat_drift\tz_hat_lag\n";
  out << 0 << '\t' << detail::format_real(report.initial_loglik) << "\t0\t0\t0\n";
  for (const EpochRecord& r : report.epochs)
    out << r.epoch << '\t' << detail::format_real(r.loglik) << '\t' << detail::format_real(r.seconds) << '\t'
        << detail::format_real(r.u_hat_drift) << '\t' << detail::format_real(r.z_hat_lag) << '\n';
}

/// Two-column rank vs active fraction curve.
inline void write_active_fraction_tsv(std::ostream& out, const DatasetStats& s) {
  out << "rank\tactive_fraction\n";
  for (std::size_t i = 0; i < s.active_fraction.size(); ++i)
    out << i + 1 << '\t' << detail::format_real(s.active_fraction[i]) << '\n';
}

}  // namespace lmhp

#endif  // LMHP_EVAL_HPP
