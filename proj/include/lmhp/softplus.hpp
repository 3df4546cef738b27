#ifndef LMHP_SOFTPLUS_HPP
#define LMHP_SOFTPLUS_HPP

#include <cmath>

namespace lmhp {

/// phi(x) = log(1 + e^x), evaluated without overflow for large |x|.
inline double softplus(double x) noexcept {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

/// d/dx softplus(x), the logistic sigmoid.
inline double softplus_grad(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Inverse of softplus on (0, inf).
inline double softplus_inverse(double y) noexcept {
  if (y > 30.0) return y + std::log1p(-std::exp(-y));
  return std::log(std::expm1(y));
}

}  // namespace lmhp

#endif  // LMHP_SOFTPLUS_HPP
