#ifndef LMHP_DENSE_HPP
#define LMHP_DENSE_HPP

// Reference engine: exact log-likelihood and gradient evaluating the
// compensator of every entity in every sequence, O(|X| |H| d). This is the
// oracle the lazy engine is checked against; it takes no sparsity shortcuts.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lmhp/error.hpp"
#include "lmhp/gradient.hpp"
#include "lmhp/model.hpp"
#include "lmhp/scan.hpp"

namespace lmhp {

/// Instrumentation counters filled by the engines when a pointer is passed.
struct EngineStats {
  /// Number of (sequence, entity) pairs whose parameters were read.
  std::uint64_t entity_touches = 0;
};

/// Post-activation copy of every parameter.
struct Activated {
  std::size_t dim = 0;
  double beta = 1.0;
  std::vector<double> mu, self, u, v;

  explicit Activated(const ModelParams& p) : dim(p.dim), beta(p.beta()) {
    mu.resize(p.num_entities);
    self.resize(p.num_entities);
    u.resize(p.theta_u.size());
    v.resize(p.theta_v.size());
    for (std::size_t x = 0; x < p.num_entities; ++x) {
      mu[x] = softplus(p.theta_mu[x]);
      self[x] = softplus(p.theta_self[x]);
    }
    for (std::size_t i = 0; i < u.size(); ++i) {
      u[i] = softplus(p.theta_u[i]);
      v[i] = softplus(p.theta_v[i]);
    }
  }

  std::span<const double> u_row(std::size_t x) const { return {u.data() + x * dim, dim}; }
  std::span<const double> v_row(std::size_t x) const { return {v.data() + x * dim, dim}; }
};

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

/// (1 - e^{-beta tau}) and its companion d/dbeta [(1 - e^{-beta tau}) / beta].
struct HorizonWeight {
  double weight;
  double beta_derivative;
};

inline HorizonWeight horizon_weight(double beta, double tau) {
  const double e = std::exp(-beta * tau);
  const double w = -std::expm1(-beta * tau);
  return {w, -w / (beta * beta) + tau * e / beta};
}

inline void check_inputs(const ModelParams& params, const Dataset& data) {
  if (!params.shape_valid()) throw InvalidArgument("model parameters have inconsistent shapes");
  if (params.num_entities != data.num_entities())
    throw InvalidArgument("model and dataset disagree on the number of entities");
  if (data.num_sequences() == 0) throw InvalidArgument("dataset has no sequences");
}

/// Sequence indices sorted by content so that any permutation of the same
/// sequences yields the same summation order.
inline std::vector<std::size_t> canonical_sequence_order(const Dataset& data) {
  std::vector<std::size_t> order(data.num_sequences());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto less = [&](std::size_t a, std::size_t b) {
    const Sequence& sa = data.sequence(a);
    const Sequence& sb = data.sequence(b);
    if (sa.horizon() != sb.horizon()) return sa.horizon() < sb.horizon();
    if (sa.size() != sb.size()) return sa.size() < sb.size();
    for (std::size_t i = 0; i < sa.size(); ++i) {
      const Event& ea = sa.events()[i];
      const Event& eb = sb.events()[i];
      if (ea.time != eb.time) return ea.time < eb.time;
      if (ea.entity != eb.entity) return ea.entity < eb.entity;
    }
    return false;
  };
  std::stable_sort(order.begin(), order.end(), less);
  return order;
}

inline void check_intensity(double lambda, std::size_t h) {
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw NumericalError("intensity is zero or not finite in sequence " + std::to_string(h));
}

}  // namespace detail

namespace detail {

inline double dense_sequence_log_likelihood(const Activated& act, const Dataset& data,
                                            std::size_t h, SequenceScan& scan,
                                            std::vector<double>& terms) {
  const Sequence& seq = data.sequence(h);
  const auto active = data.active_entities(h);
  const auto local = data.local_indices(h);
  const std::size_t dim = act.dim;
  const double beta = act.beta;
  const double horizon = seq.horizon();
  scan.reset(dim, active.size(), beta);

  terms.clear();
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const Event& e = seq.events()[i];
    const EntityId x = e.entity;
    scan.advance(e.time);
    const double r = scan.self_decay(local[i]);
    const auto ux = act.u_row(x);
    const auto vx = act.v_row(x);
    const double lambda =
        act.mu[x] + dot(ux, scan.decay_vector()) + (act.self[x] - dot(ux, vx)) * r;
    check_intensity(lambda, h);
    terms.push_back(std::log(lambda));
    scan.record(local[i], vx);
  }
  const double log_terms = pairwise_sum(terms);

  std::vector<double> z(dim, 0.0);
  std::vector<double> w_active(active.size(), 0.0);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const Event& e = seq.events()[i];
    const double w = -std::expm1(-beta * (horizon - e.time));
    const auto vy = act.v_row(e.entity);
    for (std::size_t k = 0; k < dim; ++k) z[k] += vy[k] * w;
    w_active[local[i]] += w;
  }

  terms.clear();
  std::size_t next = 0;
  for (std::size_t x = 0; x < data.num_entities(); ++x) {
    double w_x = 0.0;
    if (next < active.size() && active[next] == x) w_x = w_active[next++];
    const auto ux = act.u_row(x);
    const double excitation = dot(ux, z) + (act.self[x] - dot(ux, act.v_row(x))) * w_x;
    terms.push_back(act.mu[x] * horizon + excitation / beta);
  }
  return log_terms - pairwise_sum(terms);
}

}  // namespace detail

/// Exact log-likelihood of the whole dataset, sum over sequences and over
/// ALL entities of (sum of log-intensities at own events - compensator).
inline double dense_log_likelihood(const ModelParams& params, const Dataset& data,
                                   EngineStats* stats = nullptr) {
  detail::check_inputs(params, data);
  const Activated act(params);
  SequenceScan scan;
  std::vector<double> terms;
  long double total = 0.0L;
  for (std::size_t h : detail::canonical_sequence_order(data)) {
    total += detail::dense_sequence_log_likelihood(act, data, h, scan, terms);
    if (stats) stats->entity_touches += data.num_entities();
  }
  const double result = static_cast<double>(total);
  if (!std::isfinite(result)) throw NumericalError("log-likelihood is not finite");
  return result;
}

/// Exact analytic gradient of dense_log_likelihood w.r.t. all pre-activation
/// parameters. The v-block is accumulated forward with per-entity decays.
inline GradientBuffer dense_gradient(const ModelParams& params, const Dataset& data,
                                     EngineStats* stats = nullptr) {
  detail::check_inputs(params, data);
  using detail::dot;
  const Activated act(params);
  const std::size_t n = data.num_entities();
  const std::size_t dim = act.dim;
  const double beta = act.beta;

  // Gradients w.r.t. post-activation values; chain rule applied at the end.
  GradientBuffer g = GradientBuffer::zeros(n, dim);
  SequenceScan scan;
  std::vector<double> z(dim), z_beta(dim), u_sum(dim);
  std::vector<double> w_active, wb_active;

  for (std::size_t h : detail::canonical_sequence_order(data)) {
    const Sequence& seq = data.sequence(h);
    const auto active = data.active_entities(h);
    const auto local = data.local_indices(h);
    const double horizon = seq.horizon();
    scan.reset(dim, active.size(), beta);
    std::vector<std::size_t> seen;  // slots that already fired, in order of first event

    for (std::size_t i = 0; i < seq.size(); ++i) {
      const Event& e = seq.events()[i];
      const EntityId x = e.entity;
      const std::size_t slot = local[i];
      scan.advance(e.time);
      const double r = scan.self_decay(slot);
      const double r_beta = scan.self_derivative(slot);
      const auto ux = act.u_row(x);
      const auto vx = act.v_row(x);
      const auto s = scan.decay_vector();
      const auto p = scan.decay_derivative();
      const double uv = dot(ux, vx);
      const double lambda = act.mu[x] + dot(ux, s) + (act.self[x] - uv) * r;
      detail::check_intensity(lambda, h);
      const double inv = 1.0 / lambda;

      g.d_theta_mu[x] += inv;
      g.d_theta_self[x] += r * inv;
      for (std::size_t k = 0; k < dim; ++k) g.d_theta_u[x * dim + k] += (s[k] - vx[k] * r) * inv;
      g.d_theta_beta -= (dot(ux, p) + (act.self[x] - uv) * r_beta) * inv;
      for (std::size_t other : seen) {
        if (other == slot) continue;
        const double decayed = scan.self_decay(other);
        const EntityId y = active[other];
        for (std::size_t k = 0; k < dim; ++k) g.d_theta_v[y * dim + k] += ux[k] * decayed * inv;
      }
      if (std::find(seen.begin(), seen.end(), slot) == seen.end()) seen.push_back(slot);
      scan.record(slot, vx);
    }

    std::fill(z.begin(), z.end(), 0.0);
    std::fill(z_beta.begin(), z_beta.end(), 0.0);
    w_active.assign(active.size(), 0.0);
    wb_active.assign(active.size(), 0.0);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const Event& e = seq.events()[i];
      const auto hw = detail::horizon_weight(beta, horizon - e.time);
      const auto vy = act.v_row(e.entity);
      for (std::size_t k = 0; k < dim; ++k) {
        z[k] += vy[k] * hw.weight;
        z_beta[k] += vy[k] * hw.beta_derivative;
      }
      w_active[local[i]] += hw.weight;
      wb_active[local[i]] += hw.beta_derivative;
    }

    std::fill(u_sum.begin(), u_sum.end(), 0.0);
    std::size_t next = 0;
    for (std::size_t x = 0; x < n; ++x) {
      double w_x = 0.0, wb_x = 0.0;
      if (next < active.size() && active[next] == x) {
        w_x = w_active[next];
        wb_x = wb_active[next];
        ++next;
      }
      const auto ux = act.u_row(x);
      const auto vx = act.v_row(x);
      const double uv = dot(ux, vx);
      for (std::size_t k = 0; k < dim; ++k) u_sum[k] += ux[k];
      g.d_theta_mu[x] -= horizon;
      g.d_theta_self[x] -= w_x / beta;
      for (std::size_t k = 0; k < dim; ++k) {
        g.d_theta_u[x * dim + k] -= (z[k] - vx[k] * w_x) / beta;
        g.d_theta_v[x * dim + k] += ux[k] * w_x / beta;
      }
      g.d_theta_beta -= dot(ux, z_beta) + (act.self[x] - uv) * wb_x;
    }
    for (std::size_t a = 0; a < active.size(); ++a) {
      const EntityId y = active[a];
      for (std::size_t k = 0; k < dim; ++k) g.d_theta_v[y * dim + k] -= u_sum[k] * w_active[a] / beta;
    }
    if (stats) stats->entity_touches += n;
  }

  for (std::size_t x = 0; x < n; ++x) {
    g.d_theta_mu[x] *= softplus_grad(params.theta_mu[x]);
    g.d_theta_self[x] *= softplus_grad(params.theta_self[x]);
  }
  for (std::size_t i = 0; i < g.d_theta_u.size(); ++i) {
    g.d_theta_u[i] *= softplus_grad(params.theta_u[i]);
    g.d_theta_v[i] *= softplus_grad(params.theta_v[i]);
  }
  g.d_theta_beta *= softplus_grad(params.theta_beta);
  if (!g.all_finite()) throw NumericalError("gradient is not finite");
  return g;
}

}  // namespace lmhp

#endif  // LMHP_DENSE_HPP
