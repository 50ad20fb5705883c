#pragma once

#include <cmath>
#include <string>

#include "duogp/types.hpp"

namespace duogp {

enum class KernelFamily { SquaredExponential, Matern32 };

inline std::string kernel_family_name(KernelFamily f) {
  return f == KernelFamily::SquaredExponential ? "squared_exponential" : "matern32";
}

// Stationary anisotropic covariance: an amplitude (process variance) plus one
// lengthscale per input dimension.
struct KernelSpec {
  KernelFamily family = KernelFamily::SquaredExponential;
  double amplitude = 1.0;  // sigma^2, the k(x, x) value
  Vector lengthscales;     // one per dimension, all > 0

  [[nodiscard]] int dim() const { return static_cast<int>(lengthscales.size()); }
};

namespace detail {

// Scaled squared distance sum_h (a_h - b_h)^2 / l_h^2.
inline double scaled_sqdist(const KernelSpec& k, const DesignPoint& a, const DesignPoint& b) {
  double s = 0.0;
  for (int h = 0; h < k.dim(); ++h) {
    double d = (a(h) - b(h)) / k.lengthscales(h);
    s += d * d;
  }
  return s;
}

}  // namespace detail

inline double kernel_eval(const KernelSpec& k, const DesignPoint& a, const DesignPoint& b) {
  if (a.size() != k.dim() || b.size() != k.dim())
    throw DimensionError("kernel_eval: point dimension does not match lengthscales");
  double s2 = detail::scaled_sqdist(k, a, b);
  if (k.family == KernelFamily::SquaredExponential) {
    return k.amplitude * std::exp(-0.5 * s2);
  }
  double r = std::sqrt(s2);
  const double sqrt3 = 1.7320508075688772935;
  return k.amplitude * (1.0 + sqrt3 * r) * std::exp(-sqrt3 * r);
}

// Dense covariance of a point set with `jitter` added to the diagonal.
// Built from the lower triangle and mirrored, so the result is exactly
// symmetric in floating point.
inline Matrix cov_matrix(const KernelSpec& k, const Matrix& X, double jitter) {
  const int m = static_cast<int>(X.rows());
  if (X.cols() != k.dim())
    throw DimensionError("cov_matrix: point dimension does not match lengthscales");
  Matrix K(m, m);
  for (int i = 0; i < m; ++i) {
    K(i, i) = k.amplitude + jitter;
    for (int j = 0; j < i; ++j) {
      double v = kernel_eval(k, X.row(i).transpose(), X.row(j).transpose());
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  return K;
}

// Covariances k(x_i, t) between a point set and one target.
inline Vector cross_cov(const KernelSpec& k, const Matrix& X, const DesignPoint& target) {
  const int m = static_cast<int>(X.rows());
  Vector g(m);
  for (int i = 0; i < m; ++i)
    g(i) = kernel_eval(k, X.row(i).transpose(), target);
  return g;
}

}  // namespace duogp
