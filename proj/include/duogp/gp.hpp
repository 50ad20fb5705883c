#pragma once

#include <cmath>
#include <optional>
#include <utility>

#include "duogp/kernel.hpp"
#include "duogp/rng.hpp"
#include "duogp/types.hpp"

namespace duogp {

inline constexpr double kDefaultJitter = 1e-6;
inline constexpr double kMaxJitter = 1e-2;

struct PredictiveMoments {
  double mean = 0.0;
  double variance = 0.0;
};

// Lower-triangular Cholesky factor with the solve helpers the rest of the
// library needs.  Wraps the factor itself rather than Eigen's LLT object so
// tests and serialization can see the matrix.
class CholFactor {
 public:
  CholFactor() = default;
  explicit CholFactor(Matrix L) : L_(std::move(L)) {}

  [[nodiscard]] const Matrix& lower() const { return L_; }
  [[nodiscard]] int size() const { return static_cast<int>(L_.rows()); }

  // Solve L z = b (vector or matrix right-hand side).
  template <typename Derived>
  [[nodiscard]] typename Derived::PlainObject solve_lower(
      const Eigen::MatrixBase<Derived>& b) const {
    return L_.triangularView<Eigen::Lower>().solve(b.derived());
  }
  // Solve (L L^T) z = b.
  template <typename Derived>
  [[nodiscard]] typename Derived::PlainObject solve(const Eigen::MatrixBase<Derived>& b) const {
    typename Derived::PlainObject z = solve_lower(b);
    return L_.triangularView<Eigen::Lower>().transpose().solve(z);
  }
  [[nodiscard]] double log_det() const {
    // log |L L^T| = 2 sum_i log L_ii
    return 2.0 * L_.diagonal().array().log().sum();
  }

 private:
  Matrix L_;
};

// Plain Cholesky factorization; throws NotPositiveDefinite on failure.
inline CholFactor chol_factor(const Matrix& A) {
  Eigen::LLT<Matrix> llt(A);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefinite("Cholesky factorization failed");
  return CholFactor(llt.matrixL());
}

// Factor A + jitter * I, escalating the jitter by x10 on failure up to
// `max_jitter`.  Escalations are counted process-wide; exceeding the cap
// throws.  `A` must not already contain the jitter.
inline CholFactor chol_factor_jittered(const Matrix& A, double base_jitter = kDefaultJitter,
                                       double max_jitter = kMaxJitter) {
  double jitter = base_jitter;
  while (true) {
    Matrix Aj = A;
    Aj.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(Aj);
    if (llt.info() == Eigen::Success) return CholFactor(llt.matrixL());
    if (jitter >= max_jitter)
      throw NotPositiveDefinite("covariance stayed indefinite at jitter cap");
    jitter *= 10.0;
    NumericsLog::jitter_escalations()++;
  }
}

// Log density of N(mean, L L^T) at x, `factor` holding L.
inline double mvn_logpdf(const Vector& mean, const CholFactor& factor, const Vector& x) {
  if (mean.size() != x.size() || factor.size() != x.size())
    throw DimensionError("mvn_logpdf: dimension mismatch");
  const double log2pi = 1.8378770664093454836;
  Vector z = factor.solve_lower(x - mean);
  return -0.5 * (x.size() * log2pi + factor.log_det() + z.squaredNorm());
}

// Draw from N(mean, sd^2); negative variances within roundoff of zero are
// treated as zero.
inline double sample_scalar_normal(double mean, double variance, RngStream& rng) {
  double v = variance > 0.0 ? variance : 0.0;
  return mean + std::sqrt(v) * rng.normal();
}

// Draw from N(mean, L L^T).
inline Vector sample_normal(const Vector& mean, const CholFactor& factor, RngStream& rng) {
  Vector z(mean.size());
  for (int i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return mean + factor.lower() * z;
}

// Posterior of one latent GP given noisy observations, holding the single
// Cholesky factorization needed for any number of target queries.
//
// With K = cov(X) + jitter I + diag(noise), prior mean mu, and gamma the
// cross-covariance to a target x*:
//   mean(x*) = mu + gamma^T K^{-1} (y - mu 1)
//   var(x*)  = k(x*, x*) - gamma^T K^{-1} gamma        (latent; no jitter/noise at x*)
class GpConditioner {
 public:
  GpConditioner(KernelSpec kernel, Matrix X, const Vector& y, double prior_mean,
                const Vector& noise_diag, double jitter = kDefaultJitter)
      : kernel_(std::move(kernel)), X_(std::move(X)), prior_mean_(prior_mean) {
    const int m = static_cast<int>(X_.rows());
    if (y.size() != m || noise_diag.size() != m)
      throw DimensionError("GpConditioner: observation shapes disagree");
    Matrix K = cov_matrix(kernel_, X_, 0.0);
    K.diagonal() += noise_diag;
    factor_ = chol_factor_jittered(K, jitter);
    alpha_ = factor_.solve(y - Vector::Constant(m, prior_mean));
  }

  [[nodiscard]] PredictiveMoments moments_at(const DesignPoint& target) const {
    Vector gamma = cross_cov(kernel_, X_, target);
    Vector w = factor_.solve_lower(gamma);
    PredictiveMoments out;
    out.mean = prior_mean_ + gamma.dot(alpha_);
    out.variance = kernel_.amplitude - w.squaredNorm();
    if (out.variance < 0.0) out.variance = 0.0;
    return out;
  }

  [[nodiscard]] const CholFactor& factor() const { return factor_; }

 private:
  KernelSpec kernel_;
  Matrix X_;
  double prior_mean_;
  CholFactor factor_;
  Vector alpha_;
};

// One-shot conditioning of a latent GP on noisy observations.  `noise_diag`
// carries the per-observation noise variances (exp(v_i) for the mean process,
// zeros for the log-noise process).  Returns latent moments at `target`: the
// caller adds any observation noise it wants on top of the variance.
inline PredictiveMoments gp_conditional(const KernelSpec& kernel, const Matrix& X, const Vector& y,
                                        double prior_mean, const Vector& noise_diag,
                                        const DesignPoint& target, double jitter = kDefaultJitter) {
  if (X.rows() == 0) {
    // No data: prior moments.
    return {prior_mean, kernel.amplitude};
  }
  GpConditioner cond(kernel, X, y, prior_mean, noise_diag, jitter);
  return cond.moments_at(target);
}

// Predictive of the log-noise process at `target` given latent values v at X.
// The log-noise field is observed exactly (it is latent, not noisy), so the
// noise diagonal is zero.
inline PredictiveMoments v_predictive(const KernelSpec& v_kernel, double mu0, const Matrix& X,
                                      const Vector& v, const DesignPoint& target,
                                      double jitter = kDefaultJitter) {
  return gp_conditional(v_kernel, X, v, mu0, Vector::Zero(X.rows()), target, jitter);
}

}  // namespace duogp
