#ifndef LMHP_GRADIENT_HPP
#define LMHP_GRADIENT_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "lmhp/model.hpp"

namespace lmhp {

/// Dense gradient of the log-likelihood w.r.t. every pre-activation parameter.
/// Same layout as ModelParams.
struct GradientBuffer {
  std::size_t num_entities = 0;
  std::size_t dim = 0;
  std::vector<double> d_theta_mu;
  double d_theta_beta = 0.0;
  std::vector<double> d_theta_self;
  std::vector<double> d_theta_u;
  std::vector<double> d_theta_v;

  static GradientBuffer zeros(std::size_t num_entities, std::size_t dim) {
    GradientBuffer g;
    g.num_entities = num_entities;
    g.dim = dim;
    g.d_theta_mu.assign(num_entities, 0.0);
    g.d_theta_self.assign(num_entities, 0.0);
    g.d_theta_u.assign(num_entities * dim, 0.0);
    g.d_theta_v.assign(num_entities * dim, 0.0);
    return g;
  }

  bool all_finite() const {
    auto finite = [](double v) { return std::isfinite(v); };
    return std::isfinite(d_theta_beta) && std::all_of(d_theta_mu.begin(), d_theta_mu.end(), finite) &&
           std::all_of(d_theta_self.begin(), d_theta_self.end(), finite) &&
           std::all_of(d_theta_u.begin(), d_theta_u.end(), finite) &&
           std::all_of(d_theta_v.begin(), d_theta_v.end(), finite);
  }
};

/// Gradient contribution of one sequence. Row i of every block belongs to
/// entities[i]; entities not listed have zero gradient. d_theta_beta is the
/// contribution to the global slot.
struct SparseGradient {
  std::size_t dim = 0;
  std::vector<EntityId> entities;
  std::vector<double> d_theta_mu;
  std::vector<double> d_theta_self;
  std::vector<double> d_theta_u;
  std::vector<double> d_theta_v;
  double d_theta_beta = 0.0;

  void reset(std::span<const EntityId> active, std::size_t d) {
    dim = d;
    entities.assign(active.begin(), active.end());
    d_theta_mu.assign(active.size(), 0.0);
    d_theta_self.assign(active.size(), 0.0);
    d_theta_u.assign(active.size() * d, 0.0);
    d_theta_v.assign(active.size() * d, 0.0);
    d_theta_beta = 0.0;
  }

  std::size_t size() const noexcept { return entities.size(); }

  bool all_finite() const {
    auto finite = [](double v) { return std::isfinite(v); };
    return std::isfinite(d_theta_beta) && std::all_of(d_theta_mu.begin(), d_theta_mu.end(), finite) &&
           std::all_of(d_theta_self.begin(), d_theta_self.end(), finite) &&
           std::all_of(d_theta_u.begin(), d_theta_u.end(), finite) &&
           std::all_of(d_theta_v.begin(), d_theta_v.end(), finite);
  }

  void add_to(GradientBuffer& out) const {
    out.d_theta_beta += d_theta_beta;
    for (std::size_t i = 0; i < entities.size(); ++i) {
      const EntityId x = entities[i];
      out.d_theta_mu[x] += d_theta_mu[i];
      out.d_theta_self[x] += d_theta_self[i];
      for (std::size_t k = 0; k < dim; ++k) {
        out.d_theta_u[x * dim + k] += d_theta_u[i * dim + k];
        out.d_theta_v[x * dim + k] += d_theta_v[i * dim + k];
      }
    }
  }
};

}  // namespace lmhp

#endif  // LMHP_GRADIENT_HPP
