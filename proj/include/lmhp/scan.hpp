#ifndef LMHP_SCAN_HPP
#define LMHP_SCAN_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace lmhp {

/// Running exponentially-decayed event sums for one pass over a sequence.
///
/// After advance(t) the scan holds, over all recorded events t_j < t,
///   decay_vector      S(t)  = sum_j v_{y_j} e^{-beta (t - t_j)}
///   decay_derivative  P(t)  = sum_j v_{y_j} (t - t_j) e^{-beta (t - t_j)}   (= -dS/dbeta)
/// and per slot (one slot per active entity)
///   self_decay        R_x(t)  = sum_{j : y_j = x} e^{-beta (t - t_j)}
///   self_derivative   R'_x(t) = sum_{j : y_j = x} (t - t_j) e^{-beta (t - t_j)}
///
/// Slots are decayed lazily, so each event costs O(dim) regardless of the
/// number of slots.
class SequenceScan {
 public:
  SequenceScan() = default;
  SequenceScan(std::size_t dim, std::size_t num_slots, double beta) { reset(dim, num_slots, beta); }

  void reset(std::size_t dim, std::size_t num_slots, double beta) {
    beta_ = beta;
    now_ = 0.0;
    decay_.assign(dim, 0.0);
    derivative_.assign(dim, 0.0);
    slots_.assign(num_slots, Slot{});
  }

  void advance(double t) {
    const double dt = t - now_;
    if (dt > 0.0) {
      const double decay = std::exp(-beta_ * dt);
      for (std::size_t k = 0; k < decay_.size(); ++k) {
        derivative_[k] = decay * (derivative_[k] + dt * decay_[k]);
        decay_[k] *= decay;
      }
    }
    now_ = t;
  }

  std::span<const double> decay_vector() const noexcept { return decay_; }
  std::span<const double> decay_derivative() const noexcept { return derivative_; }

  double self_decay(std::size_t slot) { return bring_to_now(slot).value; }
  double self_derivative(std::size_t slot) { return bring_to_now(slot).derivative; }

  /// Adds an event of `slot` at the current time with factor vector v.
  void record(std::size_t slot, std::span<const double> v) {
    for (std::size_t k = 0; k < decay_.size(); ++k) decay_[k] += v[k];
    Slot& s = bring_to_now(slot);
    s.value += 1.0;
  }

  double last_time() const noexcept { return now_; }
  double beta() const noexcept { return beta_; }

 private:
  struct Slot {
    double value = 0.0;
    double derivative = 0.0;
    double time = 0.0;
  };

  Slot& bring_to_now(std::size_t slot) {
    Slot& s = slots_[slot];
    const double dt = now_ - s.time;
    if (dt > 0.0) {
      const double decay = std::exp(-beta_ * dt);
      s.derivative = decay * (s.derivative + dt * s.value);
      s.value *= decay;
      s.time = now_;
    }
    return s;
  }

  double beta_ = 1.0;
  double now_ = 0.0;
  std::vector<double> decay_;
  std::vector<double> derivative_;
  std::vector<Slot> slots_;
};

}  // namespace lmhp

#endif  // LMHP_SCAN_HPP
