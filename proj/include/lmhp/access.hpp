#ifndef LMHP_ACCESS_HPP
#define LMHP_ACCESS_HPP

#include <atomic>
#include <cstdint>
#include <utility>

namespace lmhp {

/// Ordinary loads and stores; used by sequential code paths.
struct PlainAccess {
  template <class T>
  static T load(const T& ref) noexcept {
    return ref;
  }
  template <class T>
  static void store(T& ref, T value) noexcept {
    ref = value;
  }
  static void add(double& ref, double delta) noexcept { ref += delta; }
  static double exchange(double& ref, double value) noexcept { return std::exchange(ref, value); }
};

/// Hogwild access contract: every individual scalar read and write is atomic
/// (relaxed); there is no ordering across scalars, so a vector may be observed
/// half-updated. add() is an atomic read-modify-write.
struct RelaxedAtomicAccess {
  template <class T>
  static T load(const T& ref) noexcept {
    return std::atomic_ref<T>(const_cast<T&>(ref)).load(std::memory_order_relaxed);
  }
  template <class T>
  static void store(T& ref, T value) noexcept {
    std::atomic_ref<T>(ref).store(value, std::memory_order_relaxed);
  }
  static void add(double& ref, double delta) noexcept {
    std::atomic_ref<double>(ref).fetch_add(delta, std::memory_order_relaxed);
  }
  static double exchange(double& ref, double value) noexcept {
    return std::atomic_ref<double>(ref).exchange(value, std::memory_order_relaxed);
  }
};

}  // namespace lmhp

#endif  // LMHP_ACCESS_HPP
