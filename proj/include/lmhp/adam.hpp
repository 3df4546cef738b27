#ifndef LMHP_ADAM_HPP
#define LMHP_ADAM_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "lmhp/access.hpp"
#include "lmhp/error.hpp"
#include "lmhp/gradient.hpp"
#include "lmhp/model.hpp"
#include "lmhp/softplus.hpp"

namespace lmhp {

struct AdamConfig {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw InvalidArgument("learning rate must be a non-negative finite number");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
      throw InvalidArgument("Adam decay rates must lie in (0, 1)");
    if (!(eps > 0.0)) throw InvalidArgument("Adam epsilon must be positive");
  }
};

/// First and second moments shaped like ModelParams. Step counters are kept
/// per entity and block, so bias correction only advances for coordinates
/// that were actually updated.
struct AdamState {
  GradientBuffer first_moment;
  GradientBuffer second_moment;
  std::vector<std::uint64_t> steps_mu, steps_self, steps_u, steps_v;
  std::uint64_t steps_beta = 0;

  static AdamState zeros(std::size_t num_entities, std::size_t dim) {
    AdamState s;
    s.first_moment = GradientBuffer::zeros(num_entities, dim);
    s.second_moment = GradientBuffer::zeros(num_entities, dim);
    s.steps_mu.assign(num_entities, 0);
    s.steps_self.assign(num_entities, 0);
    s.steps_u.assign(num_entities, 0);
    s.steps_v.assign(num_entities, 0);
    return s;
  }
};

namespace detail {

/// One ascent step on a contiguous block sharing a step counter. When
/// `u_hat` is non-empty the block is a theta_u row and u_hat tracks the
/// change of its softplus image.
template <class Access>
void adam_block(const AdamConfig& cfg, std::uint64_t& steps, double* theta, double* m, double* v,
                const double* g, std::size_t len, std::span<double> u_hat = {}) {
  const std::uint64_t t = Access::load(steps) + 1;
  Access::store(steps, t);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < len; ++i) {
    const double mi = cfg.beta1 * Access::load(m[i]) + (1.0 - cfg.beta1) * g[i];
    const double vi = cfg.beta2 * Access::load(v[i]) + (1.0 - cfg.beta2) * g[i] * g[i];
    Access::store(m[i], mi);
    Access::store(v[i], vi);
    const double old = Access::load(theta[i]);
    const double updated = old + cfg.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps);
    if (updated == old) continue;
    if (u_hat.empty()) {
      Access::store(theta[i], updated);
    } else {
      // Charge u_hat against the value actually replaced, so concurrent
      // writers keep it consistent with whatever theta ends up holding.
      const double replaced = Access::exchange(theta[i], updated);
      Access::add(u_hat[i], softplus(updated) - softplus(replaced));
    }
  }
}

}  // namespace detail

/// Sparse Adam ascent step: only the entities listed in `grads` (and beta)
/// are updated. If `u_hat` is given it is kept equal to the sum of
/// softplus(theta_u) under the update.
template <class Access = PlainAccess>
void adam_step(AdamState& state, const SparseGradient& grads, const AdamConfig& cfg, ModelParams& params,
               std::span<double> u_hat = {}, Access = {}) {
  const std::size_t dim = params.dim;
  if (grads.dim != dim && grads.size() != 0) throw InvalidArgument("gradient dimension mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const EntityId x = grads.entities[i];
    if (x >= params.num_entities) throw std::out_of_range("gradient entity out of range");
    detail::adam_block<Access>(cfg, state.steps_mu[x], &params.theta_mu[x], &state.first_moment.d_theta_mu[x],
                               &state.second_moment.d_theta_mu[x], &grads.d_theta_mu[i], 1);
    detail::adam_block<Access>(cfg, state.steps_self[x], &params.theta_self[x],
                               &state.first_moment.d_theta_self[x], &state.second_moment.d_theta_self[x],
                               &grads.d_theta_self[i], 1);
    detail::adam_block<Access>(cfg, state.steps_u[x], &params.theta_u[x * dim],
                               &state.first_moment.d_theta_u[x * dim], &state.second_moment.d_theta_u[x * dim],
                               &grads.d_theta_u[i * dim], dim, u_hat);
    detail::adam_block<Access>(cfg, state.steps_v[x], &params.theta_v[x * dim],
                               &state.first_moment.d_theta_v[x * dim], &state.second_moment.d_theta_v[x * dim],
                               &grads.d_theta_v[i * dim], dim);
  }
  detail::adam_block<Access>(cfg, state.steps_beta, &params.theta_beta, &state.first_moment.d_theta_beta,
                             &state.second_moment.d_theta_beta, &grads.d_theta_beta, 1);
}

/// Dense variant: every coordinate is touched.
inline void adam_step(AdamState& state, const GradientBuffer& grads, const AdamConfig& cfg, ModelParams& params,
                      std::span<double> u_hat = {}) {
  SparseGradient sparse;
  std::vector<EntityId> all(params.num_entities);
  for (EntityId x = 0; x < params.num_entities; ++x) all[x] = x;
  sparse.reset(all, params.dim);
  sparse.d_theta_mu = grads.d_theta_mu;
  sparse.d_theta_self = grads.d_theta_self;
  sparse.d_theta_u = grads.d_theta_u;
  sparse.d_theta_v = grads.d_theta_v;
  sparse.d_theta_beta = grads.d_theta_beta;
  adam_step(state, sparse, cfg, params, u_hat);
}

}  // namespace lmhp

#endif  // LMHP_ADAM_HPP
