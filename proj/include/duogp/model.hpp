#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "duogp/gp.hpp"
#include "duogp/kernel.hpp"
#include "duogp/types.hpp"

namespace duogp {

// ---------------------------------------------------------------------------
// Parameters and priors
// ---------------------------------------------------------------------------

// Top-level parameters of the paired-GP model: a GP over the mean response
// (amplitude sigma_f^2, lengthscales lf) and a GP over the log noise variance
// (prior mean mu0, amplitude sigma_v^2, lengthscales lv).
struct Hyperparameters {
  double mu0 = 0.0;
  double sigma_f2 = 1.0;
  double sigma_v2 = 1.0;
  Vector lf;
  Vector lv;

  [[nodiscard]] int dim() const { return static_cast<int>(lf.size()); }
};

struct GammaPrior {
  double shape = 2.0;
  double rate = 1.0;  // density ~ l^{shape-1} exp(-rate * l); mean shape/rate
};

struct PriorSpec {
  double mu0_mean = 0.0;
  double mu0_var = 0.5;
  double alpha_f = 1.0, beta_f = 1.0;  // sigma_f^2 ~ InvGamma(alpha, beta)
  double alpha_v = 2.0, beta_v = 1.0;  // sigma_v^2 ~ InvGamma(alpha, beta)
  std::vector<GammaPrior> lf;          // one per input dimension
  std::vector<GammaPrior> lv;

  [[nodiscard]] int dim() const { return static_cast<int>(lf.size()); }
};

// Default prior table: lengthscale rates scale with the design-grid spacing
// (rate 0.2 / h per dimension) so the prior mean lengthscale spans ~10 cells.
inline PriorSpec default_priors(const Vector& spacing) {
  PriorSpec p;
  for (int h = 0; h < spacing.size(); ++h) {
    if (spacing(h) <= 0.0) throw ConfigError("default_priors: spacing must be positive");
    GammaPrior g{2.0, 0.2 / spacing(h)};
    p.lf.push_back(g);
    p.lv.push_back(g);
  }
  return p;
}

namespace detail {

inline double normal_logpdf(double x, double mean, double var) {
  const double log2pi = 1.8378770664093454836;
  double d = x - mean;
  return -0.5 * (log2pi + std::log(var) + d * d / var);
}

inline double invgamma_logpdf(double x, double alpha, double beta) {
  if (x <= 0.0) return -std::numeric_limits<double>::infinity();
  return alpha * std::log(beta) - std::lgamma(alpha) - (alpha + 1.0) * std::log(x) - beta / x;
}

inline double gamma_logpdf(double x, double shape, double rate) {
  if (x <= 0.0) return -std::numeric_limits<double>::infinity();
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

// Stationary covariance over a fixed point set with the per-dimension squared
// coordinate differences cached, so repeated evaluation at new lengthscales
// (the sampler's hot loop) costs one vectorized exp per matrix.
class CovBuilder {
 public:
  CovBuilder() = default;
  CovBuilder(const Matrix& X, KernelFamily family) : family_(family) {
    const int m = static_cast<int>(X.rows());
    for (int h = 0; h < X.cols(); ++h) {
      Matrix D(m, m);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
          double diff = X(i, h) - X(j, h);
          D(i, j) = diff * diff;
        }
      sqd_.push_back(std::move(D));
    }
    m_ = m;
  }

  [[nodiscard]] int size() const { return m_; }
  [[nodiscard]] int input_dim() const { return static_cast<int>(sqd_.size()); }

  // K = amplitude * corr(lengthscales); optionally also dK/dl_h for each h.
  void build(double amplitude, const Vector& ls, Matrix& K, std::vector<Matrix>* dK_dl) const {
    const int d = input_dim();
    Matrix s2 = sqd_[0] * (1.0 / (ls(0) * ls(0)));
    for (int h = 1; h < d; ++h) s2 += sqd_[h] * (1.0 / (ls(h) * ls(h)));
    if (family_ == KernelFamily::SquaredExponential) {
      K = amplitude * (-0.5 * s2.array()).exp().matrix();
      if (dK_dl)
        for (int h = 0; h < d; ++h)
          (*dK_dl)[h] = K.cwiseProduct(sqd_[h]) * (1.0 / (ls(h) * ls(h) * ls(h)));
    } else {
      const double sqrt3 = 1.7320508075688772935;
      Matrix e = (-sqrt3 * s2.array().sqrt()).exp().matrix();
      K = amplitude * ((1.0 + sqrt3 * s2.array().sqrt()) * e.array()).matrix();
      if (dK_dl) {
        // dk/dl_h = 3 * amplitude * exp(-sqrt3 r) * (x_h - x'_h)^2 / l_h^3
        for (int h = 0; h < d; ++h)
          (*dK_dl)[h] =
              (3.0 * amplitude) * e.cwiseProduct(sqd_[h]) * (1.0 / (ls(h) * ls(h) * ls(h)));
      }
    }
  }

 private:
  KernelFamily family_ = KernelFamily::SquaredExponential;
  std::vector<Matrix> sqd_;
  int m_ = 0;
};

// Cholesky of A + jitter I with the standard x10 escalation ladder.  Returns
// false (and bumps the indefinite-rejection counter) if the cap is passed;
// density evaluations then treat the state as having zero posterior mass.
inline bool llt_with_escalation(const Matrix& A, double base_jitter, Eigen::LLT<Matrix>& llt) {
  double jitter = base_jitter;
  while (true) {
    Matrix Aj = A;
    Aj.diagonal().array() += jitter;
    llt.compute(Aj);
    if (llt.info() == Eigen::Success) return true;
    if (jitter >= kMaxJitter) {
      NumericsLog::indefinite_rejections()++;
      return false;
    }
    jitter *= 10.0;
    NumericsLog::jitter_escalations()++;
  }
}

}  // namespace detail

// Joint log prior density over the hyperparameters.
inline double prior_logpdf(const Hyperparameters& theta, const PriorSpec& priors) {
  if (theta.dim() != priors.dim() || theta.lv.size() != theta.lf.size())
    throw DimensionError("prior_logpdf: dimension mismatch");
  double lp = detail::normal_logpdf(theta.mu0, priors.mu0_mean, priors.mu0_var);
  lp += detail::invgamma_logpdf(theta.sigma_f2, priors.alpha_f, priors.beta_f);
  lp += detail::invgamma_logpdf(theta.sigma_v2, priors.alpha_v, priors.beta_v);
  for (int h = 0; h < theta.dim(); ++h) {
    lp += detail::gamma_logpdf(theta.lf(h), priors.lf[h].shape, priors.lf[h].rate);
    lp += detail::gamma_logpdf(theta.lv(h), priors.lv[h].shape, priors.lv[h].rate);
  }
  return lp;
}

// ---------------------------------------------------------------------------
// Latent state and the unconstrained parameterization
// ---------------------------------------------------------------------------

struct LatentState {
  Hyperparameters theta;
  Vector v;  // latent log noise variance at each observed point
};

// Unconstrained coordinate layout (dimension 3 + 2d + m):
//   [ mu0, log sigma_f^2, log sigma_v^2, log lf_1..lf_d, log lv_1..lv_d, v_1..v_m ]
inline Vector to_unconstrained(const LatentState& s) {
  const int d = s.theta.dim();
  Vector eta(3 + 2 * d + s.v.size());
  eta(0) = s.theta.mu0;
  eta(1) = std::log(s.theta.sigma_f2);
  eta(2) = std::log(s.theta.sigma_v2);
  for (int h = 0; h < d; ++h) {
    eta(3 + h) = std::log(s.theta.lf(h));
    eta(3 + d + h) = std::log(s.theta.lv(h));
  }
  eta.tail(s.v.size()) = s.v;
  return eta;
}

inline LatentState from_unconstrained(const Vector& eta, int d) {
  const int m = static_cast<int>(eta.size()) - 3 - 2 * d;
  if (m < 0) throw DimensionError("from_unconstrained: vector too short");
  LatentState s;
  s.theta.mu0 = eta(0);
  s.theta.sigma_f2 = std::exp(eta(1));
  s.theta.sigma_v2 = std::exp(eta(2));
  s.theta.lf.resize(d);
  s.theta.lv.resize(d);
  for (int h = 0; h < d; ++h) {
    s.theta.lf(h) = std::exp(eta(3 + h));
    s.theta.lv(h) = std::exp(eta(3 + d + h));
  }
  s.v = eta.tail(m);
  return s;
}

// ---------------------------------------------------------------------------
// The joint posterior kernel (up to a constant) and its gradient
// ---------------------------------------------------------------------------

// Binds the observed data, priors and kernel family, and evaluates
//   log p(y | v, theta) + log p(v | theta) + log p(theta)
// together with its analytic gradient in the unconstrained parameterization.
class Model {
 public:
  Model(Matrix X, Vector y, PriorSpec priors, KernelFamily family,
        double jitter = kDefaultJitter)
      : X_(std::move(X)),
        y_(std::move(y)),
        priors_(std::move(priors)),
        family_(family),
        jitter_(jitter) {
    if (X_.rows() != y_.size()) throw DimensionError("Model: points/values mismatch");
    if (X_.rows() < 1) throw DimensionError("Model: needs at least one observation");
    if (priors_.dim() != X_.cols()) throw DimensionError("Model: prior table dimension mismatch");
    cov_ = detail::CovBuilder(X_, family_);
  }

  [[nodiscard]] int size() const { return static_cast<int>(X_.rows()); }
  [[nodiscard]] int input_dim() const { return static_cast<int>(X_.cols()); }
  [[nodiscard]] int dim() const { return 3 + 2 * input_dim() + size(); }
  [[nodiscard]] const Matrix& points() const { return X_; }
  [[nodiscard]] const Vector& values() const { return y_; }
  [[nodiscard]] const PriorSpec& priors() const { return priors_; }
  [[nodiscard]] KernelFamily family() const { return family_; }
  [[nodiscard]] double jitter() const { return jitter_; }

  [[nodiscard]] KernelSpec f_kernel(const Hyperparameters& t) const {
    return {family_, t.sigma_f2, t.lf};
  }
  [[nodiscard]] KernelSpec v_kernel(const Hyperparameters& t) const {
    return {family_, t.sigma_v2, t.lv};
  }

  // Joint log density in natural coordinates; -inf on invalid parameters or
  // an irrecoverably indefinite covariance.
  [[nodiscard]] double log_joint(const LatentState& s) const {
    if (s.theta.sigma_f2 <= 0.0 || s.theta.sigma_v2 <= 0.0 || (s.theta.lf.array() <= 0.0).any() ||
        (s.theta.lv.array() <= 0.0).any())
      return -std::numeric_limits<double>::infinity();
    Vector eta = to_unconstrained(s);
    double lp = eval(eta, nullptr);
    return lp - eta.segment(1, 2 + 2 * input_dim()).sum();
  }

  // Joint log density in unconstrained coordinates, including the exp-
  // transform Jacobian.  Fills `grad` (same length) when non-null.
  [[nodiscard]] double log_joint_unconstrained(const Vector& eta, Vector* grad) const {
    return eval(eta, grad);
  }

  // --- whitened sampling coordinates -------------------------------------
  //
  // The centered coordinates [theta, v] hand the sampler a hostile geometry:
  // v's prior scale is sigma_v^2 C_v, so the posterior funnels in
  // (sigma_v^2, v), and replicated design points make C_v nearly singular,
  // pinning the stable step size to the jitter scale.  Sampling instead in
  // innovation coordinates u with
  //     v = mu0 1 + L_v u,   L_v L_v^T = K_v + jitter I,
  // gives u a standard-normal prior independent of theta: the funnel
  // flattens and the near-null directions of C_v become directions the
  // likelihood ignores.  For fixed theta the map is a bijection whose
  // Jacobian cancels the v-prior normalizer, so the posterior over
  // (theta, v) is exactly the one eval() defines; draws map back via
  // unwhiten().  Layout matches to_unconstrained with u in place of v.
  [[nodiscard]] double log_joint_whitened(const Vector& eta, Vector* grad) const {
    return eval_whitened(eta, grad);
  }

  // Map centered unconstrained coordinates [theta, v] to [theta, u] and back.
  // Both use the same factor L_v(theta) as log_joint_whitened.
  [[nodiscard]] Vector whiten(const Vector& eta_centered) const {
    LatentState s = from_unconstrained(eta_centered, input_dim());
    Eigen::LLT<Matrix> llt = v_factor(s.theta);
    Vector eta = eta_centered;
    Vector r = s.v - Vector::Constant(s.v.size(), s.theta.mu0);
    eta.tail(s.v.size()) = llt.matrixL().solve(r);
    return eta;
  }

  [[nodiscard]] Vector unwhiten(const Vector& eta_whitened) const {
    LatentState s = from_unconstrained(eta_whitened, input_dim());  // s.v holds u
    Eigen::LLT<Matrix> llt = v_factor(s.theta);
    Vector eta = eta_whitened;
    eta.tail(s.v.size()) =
        Vector::Constant(s.v.size(), s.theta.mu0) + llt.matrixL() * s.v;
    return eta;
  }

 private:
  static double neg_inf() { return -std::numeric_limits<double>::infinity(); }

  // Cholesky factor of K_v + jitter I at the given hyperparameters.
  [[nodiscard]] Eigen::LLT<Matrix> v_factor(const Hyperparameters& t) const {
    Matrix Kv;
    cov_.build(t.sigma_v2, t.lv, Kv, nullptr);
    Eigen::LLT<Matrix> llt;
    if (!detail::llt_with_escalation(Kv, jitter_, llt))
      throw NotPositiveDefinite("log-noise covariance is not positive definite");
    return llt;
  }

  double eval(const Vector& eta, Vector* grad) const {
    const int d = input_dim();
    const int m = size();
    if (eta.size() != dim()) throw DimensionError("log_joint_unconstrained: wrong length");
    if (grad) grad->setZero(dim());

    // Reject overflow-prone coordinates before exponentiating.
    if (!eta.allFinite()) return neg_inf();
    for (int c = 1; c < 3 + 2 * d; ++c)
      if (std::abs(eta(c)) > 600.0) return neg_inf();

    LatentState s = from_unconstrained(eta, d);
    const Hyperparameters& t = s.theta;
    const double log2pi = 1.8378770664093454836;

    // --- mean-response GP likelihood: y ~ N(0, K_f + diag(exp v) + jitter I)
    Matrix Kf;
    std::vector<Matrix> dKf(grad ? d : 0);
    cov_.build(t.sigma_f2, t.lf, Kf, grad ? &dKf : nullptr);
    Vector noise = s.v.array().exp().matrix();
    Matrix A = Kf;
    A.diagonal() += noise;
    Eigen::LLT<Matrix> lltA;
    if (!detail::llt_with_escalation(A, jitter_, lltA)) return neg_inf();
    Vector alpha = lltA.solve(y_);
    double logdetA = 2.0 * lltA.matrixLLT().diagonal().array().log().sum();
    double lp = -0.5 * (y_.dot(alpha) + logdetA + m * log2pi);

    // --- log-noise GP prior: v ~ N(mu0 1, K_v + jitter I)
    Matrix Kv;
    std::vector<Matrix> dKv(grad ? d : 0);
    cov_.build(t.sigma_v2, t.lv, Kv, grad ? &dKv : nullptr);
    Eigen::LLT<Matrix> lltB;
    if (!detail::llt_with_escalation(Kv, jitter_, lltB)) return neg_inf();
    Vector r = s.v - Vector::Constant(m, t.mu0);
    Vector beta = lltB.solve(r);
    double logdetB = 2.0 * lltB.matrixLLT().diagonal().array().log().sum();
    lp += -0.5 * (r.dot(beta) + logdetB + m * log2pi);

    // --- hyperparameter priors and the exp-transform Jacobian
    lp += prior_logpdf(t, priors_);
    lp += eta.segment(1, 2 + 2 * d).sum();
    if (!std::isfinite(lp)) return neg_inf();
    if (!grad) return lp;

    // --- gradient: with W = (alpha alpha^T - A^{-1}) / 2, each covariance-
    // parameter direction contributes sum(W o dA/dp).
    Matrix Ainv = lltA.solve(Matrix::Identity(m, m));
    Matrix Wf = 0.5 * (alpha * alpha.transpose() - Ainv);
    Matrix Binv = lltB.solve(Matrix::Identity(m, m));
    Matrix Wv = 0.5 * (beta * beta.transpose() - Binv);

    Vector& g = *grad;
    g(0) = beta.sum() - (t.mu0 - priors_.mu0_mean) / priors_.mu0_var;
    {
      double dl = Wf.cwiseProduct(Kf).sum() / t.sigma_f2;
      dl += -(priors_.alpha_f + 1.0) / t.sigma_f2 + priors_.beta_f / (t.sigma_f2 * t.sigma_f2);
      g(1) = dl * t.sigma_f2 + 1.0;
    }
    {
      double dl = Wv.cwiseProduct(Kv).sum() / t.sigma_v2;
      dl += -(priors_.alpha_v + 1.0) / t.sigma_v2 + priors_.beta_v / (t.sigma_v2 * t.sigma_v2);
      g(2) = dl * t.sigma_v2 + 1.0;
    }
    for (int h = 0; h < d; ++h) {
      double dlf = Wf.cwiseProduct(dKf[h]).sum();
      dlf += (priors_.lf[h].shape - 1.0) / t.lf(h) - priors_.lf[h].rate;
      g(3 + h) = dlf * t.lf(h) + 1.0;
      double dlv = Wv.cwiseProduct(dKv[h]).sum();
      dlv += (priors_.lv[h].shape - 1.0) / t.lv(h) - priors_.lv[h].rate;
      g(3 + d + h) = dlv * t.lv(h) + 1.0;
    }
    // v coordinates: the noise enters A through its diagonal; the v-GP term
    // contributes -B^{-1}(v - mu0 1).
    for (int i = 0; i < m; ++i) g(3 + 2 * d + i) = Wf(i, i) * noise(i) - beta(i);
    return lp;
  }

  double eval_whitened(const Vector& eta, Vector* grad) const {
    const int d = input_dim();
    const int m = size();
    if (eta.size() != dim()) throw DimensionError("log_joint_whitened: wrong length");
    if (grad) grad->setZero(dim());

    if (!eta.allFinite()) return neg_inf();
    for (int c = 1; c < 3 + 2 * d; ++c)
      if (std::abs(eta(c)) > 600.0) return neg_inf();

    LatentState s = from_unconstrained(eta, d);
    const Hyperparameters& t = s.theta;
    const Vector& u = s.v;  // tail coordinates are innovations here
    const double log2pi = 1.8378770664093454836;

    // --- innovation map: v = mu0 1 + L_v u with L_v L_v^T = K_v + jitter I
    Matrix Kv;
    std::vector<Matrix> dKv(grad ? d : 0);
    cov_.build(t.sigma_v2, t.lv, Kv, grad ? &dKv : nullptr);
    Eigen::LLT<Matrix> lltB;
    if (!detail::llt_with_escalation(Kv, jitter_, lltB)) return neg_inf();
    Vector v = Vector::Constant(m, t.mu0) + lltB.matrixL() * u;
    // exp(v) must stay in double range; past that the state has no mass anyway.
    if (!v.allFinite() || v.cwiseAbs().maxCoeff() > 700.0) return neg_inf();

    // --- mean-response GP likelihood: y ~ N(0, K_f + diag(exp v) + jitter I)
    Matrix Kf;
    std::vector<Matrix> dKf(grad ? d : 0);
    cov_.build(t.sigma_f2, t.lf, Kf, grad ? &dKf : nullptr);
    Vector noise = v.array().exp().matrix();
    Matrix A = Kf;
    A.diagonal() += noise;
    Eigen::LLT<Matrix> lltA;
    if (!detail::llt_with_escalation(A, jitter_, lltA)) return neg_inf();
    Vector alpha = lltA.solve(y_);
    double logdetA = 2.0 * lltA.matrixLLT().diagonal().array().log().sum();
    double lp = -0.5 * (y_.dot(alpha) + logdetA + m * log2pi);

    // --- innovation prior: u ~ N(0, I)  (the v-prior normalizer cancels
    // against the |L_v| Jacobian of the map, leaving exactly this term)
    lp += -0.5 * (u.squaredNorm() + m * log2pi);

    // --- hyperparameter priors and the exp-transform Jacobian
    lp += prior_logpdf(t, priors_);
    lp += eta.segment(1, 2 + 2 * d).sum();
    if (!std::isfinite(lp)) return neg_inf();
    if (!grad) return lp;

    Matrix Ainv = lltA.solve(Matrix::Identity(m, m));
    Matrix Wf = 0.5 * (alpha * alpha.transpose() - Ainv);
    // dl/dv_i of the likelihood alone.
    Vector svec(m);
    for (int i = 0; i < m; ++i) svec(i) = Wf(i, i) * noise(i);

    Vector& g = *grad;
    g(0) = svec.sum() - (t.mu0 - priors_.mu0_mean) / priors_.mu0_var;
    {
      double dl = Wf.cwiseProduct(Kf).sum() / t.sigma_f2;
      dl += -(priors_.alpha_f + 1.0) / t.sigma_f2 + priors_.beta_f / (t.sigma_f2 * t.sigma_f2);
      g(1) = dl * t.sigma_f2 + 1.0;
    }
    for (int h = 0; h < d; ++h) {
      double dlf = Wf.cwiseProduct(dKf[h]).sum();
      dlf += (priors_.lf[h].shape - 1.0) / t.lf(h) - priors_.lf[h].rate;
      g(3 + h) = dlf * t.lf(h) + 1.0;
    }
    // Innovation coordinates: dv/du = L_v.
    Vector a = lltB.matrixU() * svec;  // a = L_v^T s
    g.tail(m) = a - u;

    // v-process hyperparameters act through L_v.  With P = L^{-1} dK L^{-T}
    // and dL = L Phi(P) (Phi: strict lower triangle plus half the diagonal),
    // the likelihood contribution is s^T dL u = a^T Phi(P) u.  Pushing the
    // rank-one adjoint a u^T back through the factor once turns every dK term
    // into an elementwise sum: a^T Phi(P) u = sum(G o dK) with
    // G = L^{-T} (strictlower(a u^T) + diag(a o u) / 2) L^{-1}.
    Matrix G = a * u.transpose();
    G.triangularView<Eigen::StrictlyUpper>().setZero();
    G.diagonal() *= 0.5;
    G = lltB.matrixU().solve(G);
    G = lltB.matrixU().solve(Matrix(G.transpose())).transpose();
    {
      double dl = G.cwiseProduct(Kv).sum();  // dK_v / d log sigma_v^2 = K_v
      dl += (-(priors_.alpha_v + 1.0) / t.sigma_v2 +
             priors_.beta_v / (t.sigma_v2 * t.sigma_v2)) *
            t.sigma_v2;
      g(2) = dl + 1.0;
    }
    for (int h = 0; h < d; ++h) {
      double dl = G.cwiseProduct(dKv[h]).sum() * t.lv(h);  // chain to log lv_h
      dl += ((priors_.lv[h].shape - 1.0) / t.lv(h) - priors_.lv[h].rate) * t.lv(h);
      g(3 + d + h) = dl + 1.0;
    }
    return lp;
  }

  Matrix X_;
  Vector y_;
  PriorSpec priors_;
  KernelFamily family_;
  double jitter_;
  detail::CovBuilder cov_;
};

// ---------------------------------------------------------------------------
// Constant-noise reduction used by the point-estimate baseline
// ---------------------------------------------------------------------------

struct HomoParameters {
  double sigma_f2 = 1.0;
  double sigma_v2 = 1.0;  // constant noise variance
  Vector lf;
};

inline Vector homo_to_unconstrained(const HomoParameters& p) {
  Vector eta(2 + p.lf.size());
  eta(0) = std::log(p.sigma_f2);
  eta(1) = std::log(p.sigma_v2);
  for (int h = 0; h < p.lf.size(); ++h) eta(2 + h) = std::log(p.lf(h));
  return eta;
}

inline HomoParameters homo_from_unconstrained(const Vector& eta) {
  HomoParameters p;
  p.sigma_f2 = std::exp(eta(0));
  p.sigma_v2 = std::exp(eta(1));
  p.lf.resize(eta.size() - 2);
  for (int h = 0; h < p.lf.size(); ++h) p.lf(h) = std::exp(eta(2 + h));
  return p;
}

// Marginal posterior kernel of the constant-noise GP model
//   y ~ N(0, K_f + sigma_v^2 I),  sigma_f^2, sigma_v^2 ~ InvGamma, lf ~ Gamma.
// Shares the prior table with the paired model; mu0 and lv are unused.
class HomoModel {
 public:
  HomoModel(Matrix X, Vector y, PriorSpec priors, KernelFamily family,
            double jitter = kDefaultJitter)
      : X_(std::move(X)),
        y_(std::move(y)),
        priors_(std::move(priors)),
        family_(family),
        jitter_(jitter),
        cov_(X_, family_) {
    if (X_.rows() != y_.size()) throw DimensionError("HomoModel: points/values mismatch");
    if (priors_.dim() != X_.cols())
      throw DimensionError("HomoModel: prior table dimension mismatch");
  }

  [[nodiscard]] int size() const { return static_cast<int>(X_.rows()); }
  [[nodiscard]] int input_dim() const { return static_cast<int>(X_.cols()); }
  [[nodiscard]] int dim() const { return 2 + input_dim(); }
  [[nodiscard]] const Matrix& points() const { return X_; }
  [[nodiscard]] const Vector& values() const { return y_; }
  [[nodiscard]] const PriorSpec& priors() const { return priors_; }
  [[nodiscard]] KernelFamily family() const { return family_; }
  [[nodiscard]] double jitter() const { return jitter_; }

  [[nodiscard]] double log_joint_unconstrained(const Vector& eta, Vector* grad) const {
    const int d = input_dim();
    const int m = size();
    if (eta.size() != dim()) throw DimensionError("HomoModel: wrong length");
    if (grad) grad->setZero(dim());
    if (!eta.allFinite()) return -std::numeric_limits<double>::infinity();
    for (int c = 0; c < eta.size(); ++c)
      if (std::abs(eta(c)) > 600.0) return -std::numeric_limits<double>::infinity();

    HomoParameters p = homo_from_unconstrained(eta);
    const double log2pi = 1.8378770664093454836;

    Matrix Kf;
    std::vector<Matrix> dKf(grad ? d : 0);
    cov_.build(p.sigma_f2, p.lf, Kf, grad ? &dKf : nullptr);
    Matrix A = Kf;
    A.diagonal().array() += p.sigma_v2;
    Eigen::LLT<Matrix> llt;
    if (!detail::llt_with_escalation(A, jitter_, llt))
      return -std::numeric_limits<double>::infinity();
    Vector alpha = llt.solve(y_);
    double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    double lp = -0.5 * (y_.dot(alpha) + logdet + m * log2pi);
    lp += detail::invgamma_logpdf(p.sigma_f2, priors_.alpha_f, priors_.beta_f);
    lp += detail::invgamma_logpdf(p.sigma_v2, priors_.alpha_v, priors_.beta_v);
    for (int h = 0; h < d; ++h)
      lp += detail::gamma_logpdf(p.lf(h), priors_.lf[h].shape, priors_.lf[h].rate);
    lp += eta.sum();  // Jacobian: every coordinate is log-transformed
    if (!std::isfinite(lp)) return -std::numeric_limits<double>::infinity();
    if (!grad) return lp;

    Matrix Ainv = llt.solve(Matrix::Identity(m, m));
    Matrix W = 0.5 * (alpha * alpha.transpose() - Ainv);
    Vector& g = *grad;
    {
      double dl = W.cwiseProduct(Kf).sum() / p.sigma_f2;
      dl += -(priors_.alpha_f + 1.0) / p.sigma_f2 + priors_.beta_f / (p.sigma_f2 * p.sigma_f2);
      g(0) = dl * p.sigma_f2 + 1.0;
    }
    {
      double dl = W.trace();  // dA/d sigma_v^2 = I
      dl += -(priors_.alpha_v + 1.0) / p.sigma_v2 + priors_.beta_v / (p.sigma_v2 * p.sigma_v2);
      g(1) = dl * p.sigma_v2 + 1.0;
    }
    for (int h = 0; h < d; ++h) {
      double dl = W.cwiseProduct(dKf[h]).sum();
      dl += (priors_.lf[h].shape - 1.0) / p.lf(h) - priors_.lf[h].rate;
      g(2 + h) = dl * p.lf(h) + 1.0;
    }
    return lp;
  }

 private:
  Matrix X_;
  Vector y_;
  PriorSpec priors_;
  KernelFamily family_;
  double jitter_;
  detail::CovBuilder cov_;
};

}  // namespace duogp
