#ifndef LMHP_MODEL_HPP
#define LMHP_MODEL_HPP

// Data model and parameterization of a multivariate exponential Hawkes
// process with a non-negative low-rank influence matrix:
//
//   lambda_x(t) = mu_x + sum_{t_i^y < t} alpha_xy exp(-beta (t - t_i^y))
//   alpha_xy    = phi(theta_self_x)     if x == y
//               = <u_x, v_y>            otherwise
//
// with mu_x = phi(theta_mu_x), beta = phi(theta_beta), u_x = phi(theta_u_x),
// v_y = phi(theta_v_y) and phi = softplus.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lmhp/error.hpp"
#include "lmhp/softplus.hpp"

namespace lmhp {

using EntityId = std::uint32_t;

struct Event {
  EntityId entity = 0;
  double time = 0.0;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Events of one observation window [0, horizon], strictly increasing in time.
class Sequence {
 public:
  Sequence() = default;

  Sequence(std::vector<Event> events, double horizon)
      : events_(std::move(events)), horizon_(horizon) {
    if (!(horizon_ > 0.0) || !std::isfinite(horizon_))
      throw InvalidArgument("sequence horizon must be positive and finite");
    for (std::size_t i = 0; i < events_.size(); ++i) {
      const double t = events_[i].time;
      if (!(t >= 0.0) || !std::isfinite(t))
        throw InvalidArgument("event time must be finite and non-negative");
      if (t > horizon_) throw InvalidArgument("event time exceeds sequence horizon");
      if (i > 0 && !(events_[i - 1].time < t))
        throw InvalidArgument("event times must be strictly increasing");
    }
  }

  std::span<const Event> events() const noexcept { return events_; }
  std::size_t size() const noexcept { return events_.size(); }
  bool empty() const noexcept { return events_.empty(); }
  double horizon() const noexcept { return horizon_; }

  friend bool operator==(const Sequence&, const Sequence&) = default;

 private:
  std::vector<Event> events_;
  double horizon_ = 1.0;
};

/// A set of sequences over a fixed entity vocabulary, with the active-entity
/// index (which entities occur in which sequence) precomputed at construction.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::size_t num_entities, std::vector<Sequence> sequences)
      : num_entities_(num_entities), sequences_(std::move(sequences)) {
    if (num_entities_ == 0) throw InvalidArgument("dataset needs at least one entity");
    build_index();
  }

  std::size_t num_entities() const noexcept { return num_entities_; }
  std::size_t num_sequences() const noexcept { return sequences_.size(); }
  std::span<const Sequence> sequences() const noexcept { return sequences_; }
  const Sequence& sequence(std::size_t h) const { return sequences_.at(h); }

  /// Distinct entities of sequence h, ascending.
  std::span<const EntityId> active_entities(std::size_t h) const {
    return {active_.data() + active_offsets_[h], active_offsets_[h + 1] - active_offsets_[h]};
  }

  /// For each event of sequence h, the position of its entity in active_entities(h).
  std::span<const std::uint32_t> local_indices(std::size_t h) const {
    return {local_.data() + local_offsets_[h], local_offsets_[h + 1] - local_offsets_[h]};
  }

  /// H+_x: ids of the sequences containing entity x, ascending.
  std::span<const std::uint32_t> sequences_containing(EntityId x) const {
    return {containing_.data() + containing_offsets_[x],
            containing_offsets_[x + 1] - containing_offsets_[x]};
  }

  std::size_t active_count(EntityId x) const {
    return containing_offsets_[x + 1] - containing_offsets_[x];
  }

  /// Sum over H-_x of T_h.
  double inactive_horizon(EntityId x) const { return inactive_horizon_[x]; }

  double total_horizon() const noexcept { return total_horizon_; }
  std::size_t num_events() const noexcept { return num_events_; }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.num_entities_ == b.num_entities_ && a.sequences_ == b.sequences_;
  }

 private:
  void build_index() {
    const std::size_t num_seq = sequences_.size();
    active_offsets_.assign(num_seq + 1, 0);
    local_offsets_.assign(num_seq + 1, 0);
    std::vector<std::uint32_t> counts(num_entities_, 0);
    std::vector<std::uint32_t> slot(num_entities_, UINT32_MAX);
    total_horizon_ = 0.0;
    num_events_ = 0;

    for (std::size_t h = 0; h < num_seq; ++h) {
      const Sequence& seq = sequences_[h];
      const std::size_t begin = active_.size();
      for (const Event& e : seq.events()) {
        if (e.entity >= num_entities_) throw InvalidArgument("event entity out of range");
        if (slot[e.entity] == UINT32_MAX) {
          slot[e.entity] = 0;
          active_.push_back(e.entity);
        }
      }
      std::sort(active_.begin() + static_cast<std::ptrdiff_t>(begin), active_.end());
      for (std::size_t i = begin; i < active_.size(); ++i) {
        slot[active_[i]] = static_cast<std::uint32_t>(i - begin);
        ++counts[active_[i]];
      }
      for (const Event& e : seq.events()) local_.push_back(slot[e.entity]);
      for (std::size_t i = begin; i < active_.size(); ++i) slot[active_[i]] = UINT32_MAX;
      active_offsets_[h + 1] = active_.size();
      local_offsets_[h + 1] = local_.size();
      total_horizon_ += seq.horizon();
      num_events_ += seq.size();
    }

    containing_offsets_.assign(num_entities_ + 1, 0);
    for (std::size_t x = 0; x < num_entities_; ++x)
      containing_offsets_[x + 1] = containing_offsets_[x] + counts[x];
    containing_.resize(containing_offsets_.back());
    std::vector<std::size_t> fill(containing_offsets_.begin(), containing_offsets_.end() - 1);
    for (std::size_t h = 0; h < num_seq; ++h) {
      for (EntityId x : active_entities(h)) {
        containing_[fill[x]++] = static_cast<std::uint32_t>(h);
      }
    }
    inactive_horizon_.resize(num_entities_);
    for (std::size_t x = 0; x < num_entities_; ++x) {
      // Direct sum over H-_x keeps this exact regardless of cancellation.
      if (counts[x] == 0) {
        inactive_horizon_[x] = total_horizon_;
        continue;
      }
      double sum = 0.0;
      std::size_t next = containing_offsets_[x];
      for (std::size_t h = 0; h < num_seq; ++h) {
        if (next < containing_offsets_[x + 1] && containing_[next] == h) {
          ++next;
          continue;
        }
        sum += sequences_[h].horizon();
      }
      inactive_horizon_[x] = sum;
    }
  }

  std::size_t num_entities_ = 0;
  std::vector<Sequence> sequences_;
  std::vector<EntityId> active_;
  std::vector<std::size_t> active_offsets_{0};
  std::vector<std::uint32_t> local_;
  std::vector<std::size_t> local_offsets_{0};
  std::vector<std::uint32_t> containing_;
  std::vector<std::size_t> containing_offsets_{0};
  std::vector<double> inactive_horizon_;
  double total_horizon_ = 0.0;
  std::size_t num_events_ = 0;
};

/// Unconstrained (pre-activation) model parameters. Matrices are row-major
/// |X| x dim.
struct ModelParams {
  std::size_t num_entities = 0;
  std::size_t dim = 0;
  std::vector<double> theta_mu;
  double theta_beta = 0.0;
  std::vector<double> theta_self;
  std::vector<double> theta_u;
  std::vector<double> theta_v;

  static ModelParams zeros(std::size_t num_entities, std::size_t dim) {
    if (num_entities == 0 || dim == 0) throw InvalidArgument("model needs |X| > 0 and dim > 0");
    ModelParams p;
    p.num_entities = num_entities;
    p.dim = dim;
    p.theta_mu.assign(num_entities, 0.0);
    p.theta_self.assign(num_entities, 0.0);
    p.theta_u.assign(num_entities * dim, 0.0);
    p.theta_v.assign(num_entities * dim, 0.0);
    return p;
  }

  bool shape_valid() const noexcept {
    return num_entities > 0 && dim > 0 && theta_mu.size() == num_entities &&
           theta_self.size() == num_entities && theta_u.size() == num_entities * dim &&
           theta_v.size() == num_entities * dim;
  }

  std::span<const double> theta_u_row(EntityId x) const { return {theta_u.data() + x * dim, dim}; }
  std::span<const double> theta_v_row(EntityId x) const { return {theta_v.data() + x * dim, dim}; }
  std::span<double> theta_u_row(EntityId x) { return {theta_u.data() + x * dim, dim}; }
  std::span<double> theta_v_row(EntityId x) { return {theta_v.data() + x * dim, dim}; }

  double mu(EntityId x) const { return softplus(theta_mu[x]); }
  double beta() const { return softplus(theta_beta); }
  double self_excitation(EntityId x) const { return softplus(theta_self[x]); }
  double u(EntityId x, std::size_t k) const { return softplus(theta_u[x * dim + k]); }
  double v(EntityId x, std::size_t k) const { return softplus(theta_v[x * dim + k]); }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

namespace detail {

inline void check_entity(const ModelParams& p, EntityId x) {
  if (x >= p.num_entities) throw std::out_of_range("entity index out of range");
}

}  // namespace detail

/// Influence of events at y on the intensity of x.
inline double alpha(const ModelParams& params, EntityId x, EntityId y) {
  detail::check_entity(params, x);
  detail::check_entity(params, y);
  if (x == y) return params.self_excitation(x);
  double dot = 0.0;
  for (std::size_t k = 0; k < params.dim; ++k) dot += params.u(x, k) * params.v(y, k);
  return dot;
}

/// Conditional intensity of x at time t given the events of h strictly before t.
inline double intensity(const ModelParams& params, const Sequence& h, EntityId x, double t) {
  detail::check_entity(params, x);
  const double beta = params.beta();
  double excitation = 0.0;
  for (const Event& e : h.events()) {
    if (!(e.time < t)) break;
    excitation += alpha(params, x, e.entity) * std::exp(-beta * (t - e.time));
  }
  return params.mu(x) + excitation;
}

/// Closed-form integral of intensity(x) over [0, T_h].
inline double compensator(const ModelParams& params, const Sequence& h, EntityId x) {
  detail::check_entity(params, x);
  const double beta = params.beta();
  const double horizon = h.horizon();
  double excitation = 0.0;
  for (const Event& e : h.events())
    excitation += alpha(params, x, e.entity) * -std::expm1(-beta * (horizon - e.time));
  return params.mu(x) * horizon + excitation / beta;
}

/// Pairwise (cascade) summation; error grows O(log n) instead of O(n).
inline double pairwise_sum(std::span<const double> values) {
  constexpr std::size_t kBlock = 32;
  if (values.size() <= kBlock) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

}  // namespace lmhp

#endif  // LMHP_MODEL_HPP
