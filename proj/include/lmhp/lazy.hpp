#ifndef LMHP_LAZY_HPP
#define LMHP_LAZY_HPP

// Lazy engine: exact log-likelihood and gradients whose per-sequence cost
// depends only on the events and active entities of that sequence.
//
// The compensator mass of entities absent from a sequence h is linear in
// their u factors, so it collapses to
//     (1/beta) (u_hat - sum_{x in h} u_x)^T z_h,   z_h = sum_{t_i^y in h} v_y (1 - e^{-beta (T_h - t_i)})
// with u_hat = sum_x u_x maintained globally, and their baseline mass
// sum_{h in H-_x} mu_x T_h is redistributed onto the |H+_x| sequences where x
// does occur through the parameter-free constant D_x. Per active entity the
// sequence contributes
//     L_x(h) - C_x / beta - mu_x D_x,   C_x = (u_hat / |h| - u_x)^T z_h.
// Entities that never occur anywhere are handled by a closed-form global term.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "lmhp/access.hpp"
#include "lmhp/dense.hpp"
#include "lmhp/error.hpp"
#include "lmhp/gradient.hpp"
#include "lmhp/model.hpp"
#include "lmhp/scan.hpp"

namespace lmhp {

/// Aggregates that let a sequence be evaluated without visiting inactive entities.
struct LazyCaches {
  std::vector<double> u_hat;       ///< sum_x u_x
  std::vector<double> z_hat;       ///< sum_h z_h (lagged by one epoch during training)
  std::vector<double> d_const;     ///< D_x = sum_{h in H-_x} T_h / |H+_x|; 0 if never active
  std::vector<double> g_mu_const;  ///< G^mu_x, same quotient as D_x
  double total_horizon = 0.0;
  std::vector<EntityId> never_active;
  std::uint64_t fingerprint = 0;   ///< params_fingerprint() of the params the caches were built with
};

struct LazyOptions {
  /// Verify that the caches were built from the same params (O(|X| d)).
  bool check_fingerprint = false;
};

/// FNV-1a over the raw bits of every parameter.
inline std::uint64_t params_fingerprint(const ModelParams& p) {
  std::uint64_t hash = 1469598103934665603ULL;
  auto mix = [&hash](const void* data, std::size_t bytes) {
    const auto* c = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      hash ^= c[i];
      hash *= 1099511628211ULL;
    }
  };
  mix(&p.num_entities, sizeof p.num_entities);
  mix(&p.dim, sizeof p.dim);
  mix(p.theta_mu.data(), p.theta_mu.size() * sizeof(double));
  mix(&p.theta_beta, sizeof p.theta_beta);
  mix(p.theta_self.data(), p.theta_self.size() * sizeof(double));
  mix(p.theta_u.data(), p.theta_u.size() * sizeof(double));
  mix(p.theta_v.data(), p.theta_v.size() * sizeof(double));
  return hash;
}

/// sum_x phi(theta_u_x), accumulated in extended precision.
inline std::vector<double> compute_u_hat(const ModelParams& params) {
  std::vector<long double> acc(params.dim, 0.0L);
  for (std::size_t x = 0; x < params.num_entities; ++x)
    for (std::size_t k = 0; k < params.dim; ++k) acc[k] += softplus(params.theta_u[x * params.dim + k]);
  return {acc.begin(), acc.end()};
}

/// z_h for one sequence under the given params.
inline void sequence_z(const ModelParams& params, const Sequence& seq, std::span<double> z) {
  const double beta = params.beta();
  std::fill(z.begin(), z.end(), 0.0);
  for (const Event& e : seq.events()) {
    const double w = -std::expm1(-beta * (seq.horizon() - e.time));
    for (std::size_t k = 0; k < params.dim; ++k) z[k] += params.v(e.entity, k) * w;
  }
}

inline std::vector<double> compute_z_hat(const ModelParams& params, const Dataset& data) {
  std::vector<long double> acc(params.dim, 0.0L);
  std::vector<double> z(params.dim);
  for (const Sequence& seq : data.sequences()) {
    sequence_z(params, seq, z);
    for (std::size_t k = 0; k < params.dim; ++k) acc[k] += z[k];
  }
  return {acc.begin(), acc.end()};
}

inline LazyCaches build_caches(const ModelParams& params, const Dataset& data) {
  detail::check_inputs(params, data);
  LazyCaches c;
  c.u_hat = compute_u_hat(params);
  c.z_hat = compute_z_hat(params, data);
  c.total_horizon = data.total_horizon();
  const std::size_t n = data.num_entities();
  c.d_const.assign(n, 0.0);
  for (EntityId x = 0; x < n; ++x) {
    const std::size_t count = data.active_count(x);
    if (count == 0) {
      c.never_active.push_back(x);
      continue;
    }
    c.d_const[x] = data.inactive_horizon(x) / static_cast<double>(count);
  }
  c.g_mu_const = c.d_const;
  c.fingerprint = params_fingerprint(params);
  return c;
}

/// Incremental u_hat maintenance after theta_u_x changed from old to new.
template <class Access = PlainAccess>
void update_u_hat(LazyCaches& caches, std::span<const double> theta_u_old,
                  std::span<const double> theta_u_new, Access = {}) {
  for (std::size_t k = 0; k < caches.u_hat.size(); ++k) {
    if (theta_u_old[k] == theta_u_new[k]) continue;
    Access::add(caches.u_hat[k], softplus(theta_u_new[k]) - softplus(theta_u_old[k]));
  }
}

/// Evaluates one sequence: its lazy log-likelihood contribution, optionally
/// its sparse gradient, and its z_h. Holds scratch buffers; one per thread.
class LazySequenceKernel {
 public:
  LazySequenceKernel() = default;

  /// Returns sum_{x in h} (L_x(h) - C_x / beta - mu_x D_x). When `grad` is
  /// non-null it receives the gradient of that quantity plus the per-sequence
  /// share of the u_hat/z_hat terms, so that summing over all sequences and
  /// adding never_active_gradient() gives the exact full gradient. When
  /// `z_out` is non-empty it receives z_h.
  template <class Access = PlainAccess>
  double run(const ModelParams& params, const Dataset& data, std::size_t h,
             const LazyCaches& caches, SparseGradient* grad, std::span<double> z_out = {},
             EngineStats* stats = nullptr, Access = {}) {
    const Sequence& seq = data.sequence(h);
    const auto active = data.active_entities(h);
    const auto local = data.local_indices(h);
    const std::size_t k = active.size();
    const std::size_t n_events = seq.size();
    const std::size_t dim = params.dim;
    const double horizon = seq.horizon();
    if (stats) stats->entity_touches += k;
    if (k == 0) {
      if (grad) grad->reset(active, dim);
      if (!z_out.empty()) std::fill(z_out.begin(), z_out.end(), 0.0);
      return 0.0;
    }

    gather<Access>(params, data, caches, active, grad != nullptr);
    const double beta = beta_;

    // Forward pass: intensities at each event.
    scan_.reset(dim, k, beta);
    lambda_.resize(n_events);
    log_terms_.resize(n_events);
    if (grad) zero_gradients(k, dim);
    double g_beta = 0.0;
    for (std::size_t i = 0; i < n_events; ++i) {
      const double t = seq.events()[i].time;
      const std::size_t a = local[i];
      scan_.advance(t);
      const double r = scan_.self_decay(a);
      const double* ua = &u_[a * dim];
      const double* va = &v_[a * dim];
      const auto s = scan_.decay_vector();
      double us = 0.0;
      for (std::size_t j = 0; j < dim; ++j) us += ua[j] * s[j];
      const double lambda = mu_[a] + us + (self_[a] - uv_[a]) * r;
      detail::check_intensity(lambda, h);
      lambda_[i] = lambda;
      log_terms_[i] = std::log(lambda);
      if (grad) {
        const double inv = 1.0 / lambda;
        const double r_beta = scan_.self_derivative(a);
        const auto p = scan_.decay_derivative();
        double up = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          gu_[a * dim + j] += (s[j] - va[j] * r) * inv;
          up += ua[j] * p[j];
        }
        gmu_[a] += inv;
        gself_[a] += r * inv;
        g_beta -= (up + (self_[a] - uv_[a]) * r_beta) * inv;
      }
      scan_.record(a, {va, dim});
    }
    double loglik = pairwise_sum(log_terms_);

    // Backward pass for the v-block of the log terms:
    //   d/dv_y = sum_{j : y_j = y} sum_{i > j, y_i != y} (u_{y_i} / lambda_i) e^{-beta (t_i - t_j)}
    if (grad && n_events > 1) {
      back_.assign(dim, 0.0);
      self_acc_.assign(k, 0.0);
      self_time_.assign(k, -1.0);
      for (std::size_t i = n_events; i-- > 0;) {
        const double t = seq.events()[i].time;
        const std::size_t a = local[i];
        if (i + 1 < n_events) {
          const double decay = std::exp(-beta * (seq.events()[i + 1].time - t));
          for (std::size_t j = 0; j < dim; ++j) back_[j] *= decay;
        }
        double own = 0.0;
        if (self_time_[a] >= 0.0) own = self_acc_[a] * std::exp(-beta * (self_time_[a] - t));
        const double* ua = &u_[a * dim];
        const double inv = 1.0 / lambda_[i];
        for (std::size_t j = 0; j < dim; ++j) {
          gv_[a * dim + j] += back_[j] - ua[j] * own;
          back_[j] += ua[j] * inv;
        }
        self_acc_[a] = own + inv;
        self_time_[a] = t;
      }
    }

    // Compensator terms, shared across the active entities of h.
    z_.assign(dim, 0.0);
    w_.assign(k, 0.0);
    if (grad) {
      z_beta_.assign(dim, 0.0);
      w_beta_.assign(k, 0.0);
    }
    for (std::size_t i = 0; i < n_events; ++i) {
      const std::size_t a = local[i];
      const auto hw = detail::horizon_weight(beta, horizon - seq.events()[i].time);
      const double* va = &v_[a * dim];
      for (std::size_t j = 0; j < dim; ++j) z_[j] += va[j] * hw.weight;
      w_[a] += hw.weight;
      if (grad) {
        for (std::size_t j = 0; j < dim; ++j) z_beta_[j] += va[j] * hw.beta_derivative;
        w_beta_[a] += hw.beta_derivative;
      }
    }
    if (!z_out.empty()) std::copy(z_.begin(), z_.end(), z_out.begin());

    // u_hat_h = u_hat / |h|
    const double share = 1.0 / static_cast<double>(k);
    u_sum_.assign(dim, 0.0);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t j = 0; j < dim; ++j) u_sum_[j] += u_[a * dim + j];

    comp_terms_.resize(k);
    for (std::size_t a = 0; a < k; ++a) {
      const double* ua = &u_[a * dim];
      double uz = 0.0, c = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        uz += ua[j] * z_[j];
        c += (u_hat_[j] * share - ua[j]) * z_[j];
      }
      const double compensator = mu_[a] * horizon + (uz + (self_[a] - uv_[a]) * w_[a]) / beta;
      comp_terms_[a] = compensator + c / beta + mu_[a] * d_const_[a];
    }
    loglik -= pairwise_sum(comp_terms_);

    if (grad) {
      for (std::size_t a = 0; a < k; ++a) {
        const double* ua = &u_[a * dim];
        const double* va = &v_[a * dim];
        // G^u share: z_h - z_hat / |H+_x|
        const double z_share = 1.0 / h_plus_[a];
        double uzb = 0.0, cb = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          gu_[a * dim + j] += (-(z_[j] - va[j] * w_[a]) + (z_[j] - z_hat_[j] * z_share)) / beta;
          // G^v: sum_{x in h} (u_hat_h - u_x) w_y, plus the other active
          // entities' own compensators.
          const double others = u_sum_[j] - ua[j];
          const double inactive = u_hat_[j] - u_sum_[j];
          gv_[a * dim + j] -= (others + inactive) * w_[a] / beta;
          uzb += ua[j] * z_beta_[j];
          cb += (u_hat_[j] * share - ua[j]) * z_beta_[j];
        }
        gmu_[a] -= horizon + g_mu_const_[a];
        gself_[a] -= w_[a] / beta;
        g_beta -= uzb + (self_[a] - uv_[a]) * w_beta_[a] + cb;
      }
      grad->reset(active, dim);
      for (std::size_t a = 0; a < k; ++a) {
        grad->d_theta_mu[a] = gmu_[a] * sig_mu_[a];
        grad->d_theta_self[a] = gself_[a] * sig_self_[a];
        for (std::size_t j = 0; j < dim; ++j) {
          grad->d_theta_u[a * dim + j] = gu_[a * dim + j] * sig_u_[a * dim + j];
          grad->d_theta_v[a * dim + j] = gv_[a * dim + j] * sig_v_[a * dim + j];
        }
      }
      grad->d_theta_beta = g_beta * sig_beta_;
      if (!grad->all_finite())
        throw NumericalError("non-finite gradient contribution in sequence " + std::to_string(h));
    }
    if (!std::isfinite(loglik))
      throw NumericalError("non-finite log-likelihood contribution in sequence " + std::to_string(h));
    return loglik;
  }

 private:
  template <class Access>
  void gather(const ModelParams& params, const Dataset& data, const LazyCaches& caches,
              std::span<const EntityId> active, bool with_grad) {
    const std::size_t k = active.size();
    const std::size_t dim = params.dim;
    mu_.resize(k);
    self_.resize(k);
    uv_.resize(k);
    u_.resize(k * dim);
    v_.resize(k * dim);
    d_const_.resize(k);
    g_mu_const_.resize(k);
    h_plus_.resize(k);
    if (with_grad) {
      sig_mu_.resize(k);
      sig_self_.resize(k);
      sig_u_.resize(k * dim);
      sig_v_.resize(k * dim);
    }
    const double theta_beta = Access::load(params.theta_beta);
    beta_ = softplus(theta_beta);
    sig_beta_ = softplus_grad(theta_beta);
    u_hat_.resize(dim);
    z_hat_.resize(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      u_hat_[j] = Access::load(caches.u_hat[j]);
      z_hat_[j] = Access::load(caches.z_hat[j]);
    }
    for (std::size_t a = 0; a < k; ++a) {
      const EntityId x = active[a];
      const double tm = Access::load(params.theta_mu[x]);
      const double ts = Access::load(params.theta_self[x]);
      mu_[a] = softplus(tm);
      self_[a] = softplus(ts);
      if (with_grad) {
        sig_mu_[a] = softplus_grad(tm);
        sig_self_[a] = softplus_grad(ts);
      }
      double uv = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double tu = Access::load(params.theta_u[x * dim + j]);
        const double tv = Access::load(params.theta_v[x * dim + j]);
        u_[a * dim + j] = softplus(tu);
        v_[a * dim + j] = softplus(tv);
        uv += u_[a * dim + j] * v_[a * dim + j];
        if (with_grad) {
          sig_u_[a * dim + j] = softplus_grad(tu);
          sig_v_[a * dim + j] = softplus_grad(tv);
        }
      }
      uv_[a] = uv;
      d_const_[a] = caches.d_const[x];
      g_mu_const_[a] = caches.g_mu_const[x];
      h_plus_[a] = static_cast<double>(data.active_count(x));
    }
  }

  void zero_gradients(std::size_t k, std::size_t dim) {
    gmu_.assign(k, 0.0);
    gself_.assign(k, 0.0);
    gu_.assign(k * dim, 0.0);
    gv_.assign(k * dim, 0.0);
  }

  double beta_ = 1.0, sig_beta_ = 0.0;
  std::vector<double> mu_, self_, uv_, u_, v_, d_const_, g_mu_const_, h_plus_;
  std::vector<double> sig_mu_, sig_self_, sig_u_, sig_v_;
  std::vector<double> u_hat_, z_hat_;
  std::vector<double> lambda_, log_terms_, comp_terms_;
  std::vector<double> gmu_, gself_, gu_, gv_;
  std::vector<double> back_, self_acc_, self_time_;
  std::vector<double> z_, z_beta_, w_, w_beta_, u_sum_;
  SequenceScan scan_;
};

/// Likelihood mass of entities that occur in no sequence at all.
inline double never_active_log_likelihood(const ModelParams& params, const LazyCaches& caches) {
  double sum = 0.0;
  for (EntityId x : caches.never_active) sum += params.mu(x);
  return -sum * caches.total_horizon;
}

/// Closed-form gradient of never-active entities, added into `out`:
/// mu_x receives -total_horizon and u_x receives -z_hat / beta (their u mass
/// enters every sequence's inactive compensator).
template <class Sink>
void never_active_gradient(const ModelParams& params, const LazyCaches& caches, Sink&& sink) {
  const double beta = params.beta();
  const std::size_t dim = params.dim;
  std::vector<double> d_u(dim);
  for (EntityId x : caches.never_active) {
    const double d_mu = -caches.total_horizon * softplus_grad(params.theta_mu[x]);
    for (std::size_t k = 0; k < dim; ++k)
      d_u[k] = -caches.z_hat[k] / beta * softplus_grad(params.theta_u[x * dim + k]);
    sink(x, d_mu, std::span<const double>(d_u));
  }
}

inline void add_never_active_gradient(const ModelParams& params, const LazyCaches& caches,
                                      GradientBuffer& out) {
  const std::size_t dim = params.dim;
  never_active_gradient(params, caches, [&](EntityId x, double d_mu, std::span<const double> d_u) {
    out.d_theta_mu[x] += d_mu;
    for (std::size_t k = 0; k < dim; ++k) out.d_theta_u[x * dim + k] += d_u[k];
  });
}

namespace detail {

inline void check_caches(const ModelParams& params, const Dataset& data, const LazyCaches& caches,
                         const LazyOptions& options) {
  check_inputs(params, data);
  if (caches.u_hat.size() != params.dim || caches.z_hat.size() != params.dim ||
      caches.d_const.size() != data.num_entities() || caches.g_mu_const.size() != data.num_entities())
    throw InvalidArgument("lazy caches do not match model/dataset shape");
  if (options.check_fingerprint && caches.fingerprint != params_fingerprint(params))
    throw InvalidArgument("lazy caches were built for different parameters");
}

}  // namespace detail

/// Exact log-likelihood via the lazy decomposition. Requires caches built
/// under the same params.
inline double lazy_log_likelihood(const ModelParams& params, const Dataset& data,
                                  const LazyCaches& caches, LazyOptions options = {},
                                  EngineStats* stats = nullptr) {
  detail::check_caches(params, data, caches, options);
  LazySequenceKernel kernel;
  long double total = 0.0L;
  for (std::size_t h = 0; h < data.num_sequences(); ++h)
    total += kernel.run(params, data, h, caches, nullptr, {}, stats);
  total += never_active_log_likelihood(params, caches);
  const double result = static_cast<double>(total);
  if (!std::isfinite(result)) throw NumericalError("log-likelihood is not finite");
  return result;
}

/// Sparse gradient contribution of sequence h (active entities + beta).
inline SparseGradient lazy_sequence_gradients(const ModelParams& params, const Dataset& data,
                                              std::size_t h, const LazyCaches& caches) {
  detail::check_caches(params, data, caches, {});
  if (h >= data.num_sequences()) throw std::out_of_range("sequence index out of range");
  LazySequenceKernel kernel;
  SparseGradient g;
  kernel.run(params, data, h, caches, &g);
  return g;
}

/// Full gradient assembled from per-sequence sparse contributions plus the
/// never-active closed form. Equals dense_gradient().
inline GradientBuffer lazy_gradient(const ModelParams& params, const Dataset& data,
                                    const LazyCaches& caches, LazyOptions options = {},
                                    EngineStats* stats = nullptr) {
  detail::check_caches(params, data, caches, options);
  GradientBuffer out = GradientBuffer::zeros(params.num_entities, params.dim);
  LazySequenceKernel kernel;
  SparseGradient g;
  for (std::size_t h = 0; h < data.num_sequences(); ++h) {
    kernel.run(params, data, h, caches, &g, {}, stats);
    g.add_to(out);
  }
  add_never_active_gradient(params, caches, out);
  return out;
}

}  // namespace lmhp

#endif  // LMHP_LAZY_HPP
