#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <thread>
#include <vector>

#include "duogp/design.hpp"
#include "duogp/gp.hpp"
#include "duogp/particles.hpp"

namespace duogp {

// Prediction-error weights over the grid; empty means uniform weight 1.
struct WeightFunction {
  Vector values;

  [[nodiscard]] double at(int t) const { return values.size() == 0 ? 1.0 : values(t); }
  [[nodiscard]] bool uniform() const { return values.size() == 0; }
};

struct CandidateScore {
  int index = -1;
  double value = std::numeric_limits<double>::infinity();
  double y_hat = 0.0;
};

// Structured record of one acquisition decision: every candidate's expected
// integrated predictive variance and plug-in value, plus clamp diagnostics
// (negative Monte Carlo variance estimates clamped at zero).
struct CriterionReport {
  std::vector<CandidateScore> scores;
  int selected_index = -1;
  long clamped = 0;      // clamped per-point variance estimates
  long evaluations = 0;  // total per-point estimates formed
};

struct SelectResult {
  int index = -1;
  DesignPoint point;
  double value = 0.0;
  double y_hat = 0.0;
  Vector augment_draws;  // selected candidate's per-particle appended noise values
  CriterionReport report;
};

// Derivation keys for the draws consumed while scoring one candidate.  The
// candidate stream itself is keyed by the candidate's coordinates (not its
// grid index), so reordering the grid cannot change any point's draws.
namespace lookahead_stream {
constexpr std::uint64_t kAugment = 0;  // .derive(kAugment).derive(particle): 1 normal
constexpr std::uint64_t kNoise = 1;    // .derive(kNoise).derive(particle).derive(point_key): N2 normals
}  // namespace lookahead_stream

// Stream key derived from a point's coordinate bit patterns.
inline std::uint64_t point_key(const DesignPoint& x) {
  std::uint64_t k = 0x243F6A8885A308D3ull;  // arbitrary fixed offset
  for (int h = 0; h < x.size(); ++h) {
    std::uint64_t bits;
    double c = x(h);
    std::memcpy(&bits, &c, sizeof(bits));
    k = RngStream::mix64(k ^ bits);
  }
  return k;
}

// ---------------------------------------------------------------------------
// Cached per-particle posterior algebra over a fixed grid
// ---------------------------------------------------------------------------
//
// For each particle, with A = K_f(X) + diag(exp v) + jitter I factored as
// L L^T once per iteration, everything the criterion needs is linear algebra
// against Z = L^{-1} K_f(X, D) and w = L^{-1} y:
//
//   posterior mean at grid point t:      zw[t]   = Z[:,t] . w
//   posterior latent variance at t:      sigma^2 - zz[t],  zz[t] = |Z[:,t]|^2
//   after appending candidate c (plug-in value q): the extended factor is
//   [L 0; b^T cc] with b = Z[:,c], cc^2 = A_cc~ - |b|^2, giving
//     mean_t   = zw[t] + zeta (q - zw[c]) / cc
//     var_t    = sigma^2 - zz[t] - zeta^2,   zeta = (k(x_c,x_t) - M[c,t]) / cc
//   with M = Z^T Z.  The same shapes hold for the log-noise GP (prior mean
//   mu0, no observation noise).
class LookaheadEvaluator {
 public:
  // `with_gram` controls whether the G x G Gram blocks are formed; prediction
  // surfaces do not need them, candidate scoring does.
  LookaheadEvaluator(const ParticleSet& set, const ObservationSet& data, const DesignGrid& grid,
                     KernelFamily family, int n2, bool analytic_noise,
                     double jitter = kDefaultJitter, bool with_gram = true)
      : grid_(grid),
        family_(family),
        n2_(n2),
        analytic_(analytic_noise),
        jitter_(jitter),
        m_(data.size()),
        g_(grid.size()) {
    const int d = grid.dim();
    tkeys_.resize(g_);
    for (int t = 0; t < g_; ++t) tkeys_[t] = point_key(grid.point(t));
    // Shared squared-distance blocks: data x grid, per dimension.
    std::vector<Matrix> xd(d, Matrix(m_, g_));
    for (int h = 0; h < d; ++h)
      for (int i = 0; i < m_; ++i)
        for (int t = 0; t < g_; ++t) {
          double diff = data.points(i, h) - grid.points()(t, h);
          xd[h](i, t) = diff * diff;
        }

    caches_.resize(set.count());
    weights_.resize(set.count());
    for (int i = 0; i < set.count(); ++i) {
      const Particle& p = set.particles[i];
      if (p.state.v.size() != m_)
        throw DimensionError("LookaheadEvaluator: particle path length mismatch");
      weights_(i) = p.weight;
      Cache& c = caches_[i];
      const Hyperparameters& t = p.state.theta;
      c.mu0 = t.mu0;
      c.sf2 = t.sigma_f2;
      c.sv2 = t.sigma_v2;
      c.lf = t.lf;
      c.lv = t.lv;

      KernelSpec kf{family_, t.sigma_f2, t.lf};
      KernelSpec kv{family_, t.sigma_v2, t.lv};
      Matrix Af = cov_matrix(kf, data.points, 0.0);
      Af.diagonal() += p.state.v.array().exp().matrix();
      CholFactor Lf = chol_factor_jittered(Af, jitter_);
      Matrix Bv = cov_matrix(kv, data.points, 0.0);
      CholFactor Lv = chol_factor_jittered(Bv, jitter_);

      c.Zf = Lf.solve_lower(cross_block(kf, xd));
      c.Zv = Lv.solve_lower(cross_block(kv, xd));
      c.wf = Lf.solve_lower(data.values);
      c.wv = Lv.solve_lower(p.state.v - Vector::Constant(m_, t.mu0));
      c.zwf = c.Zf.transpose() * c.wf;
      c.zwv = c.Zv.transpose() * c.wv;
      c.zzf = c.Zf.colwise().squaredNorm().transpose();
      c.zzv = c.Zv.colwise().squaredNorm().transpose();
      if (with_gram) {
        c.Mf.noalias() = c.Zf.transpose() * c.Zf;
        c.Mv.noalias() = c.Zv.transpose() * c.Zv;
      }
    }
  }

  [[nodiscard]] int particle_count() const { return static_cast<int>(caches_.size()); }
  [[nodiscard]] const Vector& weights() const { return weights_; }

  // Plug-in response value at candidate c: the weighted posterior mean of Y.
  [[nodiscard]] double y_hat(int c) const {
    double m = 0.0;
    for (int i = 0; i < particle_count(); ++i) m += weights_(i) * caches_[i].zwf(c);
    return m;
  }

  // Expected integrated predictive variance after adding candidate c with
  // plug-in value q: sum_t w(t) * (C1_t - C2_t^2) where
  //   C1_t = sum_i wt_i avg_j [ latent_it + exp(v*_itj) + E_it^2 ]
  //   C2_t = sum_i wt_i E_it.
  // Negative per-point estimates clamp to zero (counted).  `aug_out`, when
  // non-null, receives each particle's appended noise draw at c.
  double eeimspe_at(int c, double q, const WeightFunction& wf, RngStream cand_stream,
                    Vector* aug_out, long* clamped, long* evaluations) const {
    RngStream aug_stream = cand_stream.derive(lookahead_stream::kAugment);
    RngStream noise_stream = cand_stream.derive(lookahead_stream::kNoise);
    const int n1 = particle_count();

    Vector c1 = Vector::Zero(g_);
    Vector c2 = Vector::Zero(g_);
    if (aug_out) aug_out->resize(n1);

    Vector kfc(g_), kvc(g_), mf_row(g_), mv_row(g_);
    for (int i = 0; i < n1; ++i) {
      const Cache& pc = caches_[i];
      cross_row(pc, c, kfc, kvc);
      mf_row = pc.Mf.row(c).transpose();
      mv_row = pc.Mv.row(c).transpose();

      // Conditional log-noise draw at the candidate.
      double mvc = pc.mu0 + pc.zwv(c);
      double svc2 = pc.sv2 - pc.zzv(c);
      RngStream si = aug_stream.derive(static_cast<std::uint64_t>(i));
      double vtilde = sample_scalar_normal(mvc, svc2, si);
      if (aug_out) (*aug_out)(i) = vtilde;

      double w = weights_(i);
      double ccf2 = pc.sf2 + std::exp(vtilde) + jitter_ - pc.zzf(c);
      double ccv2 = pc.sv2 + jitter_ - pc.zzv(c);
      if (!(ccf2 > 0.0) || !(ccv2 > 0.0))
        throw NotPositiveDefinite("candidate extension lost positive definiteness");
      double ccf = std::sqrt(ccf2);
      double ccv = std::sqrt(ccv2);
      double uf = (q - pc.zwf(c)) / ccf;
      double uv = (vtilde - pc.mu0 - pc.zwv(c)) / ccv;

      RngStream noise_i = noise_stream.derive(static_cast<std::uint64_t>(i));
      for (int t = 0; t < g_; ++t) {
        double zf = (kfc(t) - mf_row(t)) / ccf;
        double zv = (kvc(t) - mv_row(t)) / ccv;
        double mean_t = pc.zwf(t) + zf * uf;
        double latent = pc.sf2 - pc.zzf(t) - zf * zf;
        if (latent < 0.0) latent = 0.0;
        double mvs = pc.mu0 + pc.zwv(t) + zv * uv;
        double svs2 = pc.sv2 - pc.zzv(t) - zv * zv;
        if (svs2 < 0.0) svs2 = 0.0;
        double noise_mean;
        if (analytic_) {
          noise_mean = std::exp(mvs + 0.5 * svs2);
        } else {
          RngStream st = noise_i.derive(tkeys_[t]);
          double svs = std::sqrt(svs2);
          double acc = 0.0;
          for (int j = 0; j < n2_; ++j) acc += std::exp(mvs + svs * st.normal());
          noise_mean = acc / n2_;
        }
        c1(t) += w * (latent + noise_mean + mean_t * mean_t);
        c2(t) += w * mean_t;
      }
    }

    double total = 0.0;
    for (int t = 0; t < g_; ++t) {
      double q_t = c1(t) - c2(t) * c2(t);
      if (evaluations) ++*evaluations;
      if (q_t < 0.0) {
        q_t = 0.0;
        if (clamped) ++*clamped;
      }
      total += wf.at(t) * q_t;
    }
    return total;
  }

  // Current (no-candidate) prediction surfaces over the grid: the posterior
  // mixture mean, latent variance (within-particle mean plus across-particle
  // spread), and fitted log-noise mean.
  void surfaces(Vector& mean, Vector& var_latent, Vector& log_noise) const {
    mean = Vector::Zero(g_);
    var_latent = Vector::Zero(g_);
    log_noise = Vector::Zero(g_);
    Vector second = Vector::Zero(g_);
    for (int i = 0; i < particle_count(); ++i) {
      const Cache& pc = caches_[i];
      double w = weights_(i);
      for (int t = 0; t < g_; ++t) {
        double m = pc.zwf(t);
        double lv = pc.sf2 - pc.zzf(t);
        if (lv < 0.0) lv = 0.0;
        mean(t) += w * m;
        second(t) += w * m * m;
        var_latent(t) += w * lv;
        log_noise(t) += w * (pc.mu0 + pc.zwv(t));
      }
    }
    for (int t = 0; t < g_; ++t) {
      double spread = second(t) - mean(t) * mean(t);
      if (spread > 0.0) var_latent(t) += spread;
    }
  }

 private:
  struct Cache {
    Matrix Zf, Zv;    // m x G whitened cross-covariances
    Matrix Mf, Mv;    // G x G Gram blocks Z^T Z
    Vector wf, wv;    // whitened observations / noise-path residuals
    Vector zwf, zwv;  // posterior means over the grid
    Vector zzf, zzv;  // squared column norms
    double mu0 = 0.0, sf2 = 1.0, sv2 = 1.0;
    Vector lf, lv;
  };

  // K(X, D) for one kernel from the shared squared-distance blocks.
  [[nodiscard]] Matrix cross_block(const KernelSpec& k, const std::vector<Matrix>& xd) const {
    Matrix s2 = xd[0] * (1.0 / (k.lengthscales(0) * k.lengthscales(0)));
    for (size_t h = 1; h < xd.size(); ++h)
      s2 += xd[h] * (1.0 / (k.lengthscales(h) * k.lengthscales(h)));
    if (k.family == KernelFamily::SquaredExponential)
      return k.amplitude * (-0.5 * s2.array()).exp().matrix();
    const double sqrt3 = 1.7320508075688772935;
    Matrix r = s2.array().sqrt().matrix();
    return k.amplitude *
           ((1.0 + sqrt3 * r.array()) * (-sqrt3 * r.array()).exp()).matrix();
  }

  // Kernel row k(x_c, x_t) over all grid targets for one particle, f and v.
  void cross_row(const Cache& pc, int c, Vector& kfc, Vector& kvc) const {
    const Matrix& P = grid_.points();
    const int d = grid_.dim();
    Vector s2f = Vector::Zero(g_), s2v = Vector::Zero(g_);
    for (int h = 0; h < d; ++h) {
      double xc = P(c, h);
      double ilf = 1.0 / (pc.lf(h) * pc.lf(h));
      double ilv = 1.0 / (pc.lv(h) * pc.lv(h));
      for (int t = 0; t < g_; ++t) {
        double diff = xc - P(t, h);
        double d2 = diff * diff;
        s2f(t) += d2 * ilf;
        s2v(t) += d2 * ilv;
      }
    }
    if (family_ == KernelFamily::SquaredExponential) {
      kfc = pc.sf2 * (-0.5 * s2f.array()).exp().matrix();
      kvc = pc.sv2 * (-0.5 * s2v.array()).exp().matrix();
    } else {
      const double sqrt3 = 1.7320508075688772935;
      kfc = pc.sf2 * ((1.0 + sqrt3 * s2f.array().sqrt()) *
                      (-sqrt3 * s2f.array().sqrt()).exp()).matrix();
      kvc = pc.sv2 * ((1.0 + sqrt3 * s2v.array().sqrt()) *
                      (-sqrt3 * s2v.array().sqrt()).exp()).matrix();
    }
  }

  const DesignGrid& grid_;
  KernelFamily family_;
  int n2_;
  bool analytic_;
  double jitter_;
  int m_, g_;
  std::vector<Cache> caches_;
  Vector weights_;
  std::vector<std::uint64_t> tkeys_;  // precomputed grid-point stream keys
};

// ---------------------------------------------------------------------------
// Documented single-candidate operations
// ---------------------------------------------------------------------------

// Plug-in ("believed") response at a candidate: the particle-weighted
// posterior mean of Y there, conditioning each particle on the current data.
inline double kriging_believer(const ParticleSet& set, const ObservationSet& data,
                               const DesignPoint& candidate, KernelFamily family,
                               double jitter = kDefaultJitter) {
  double m = 0.0;
  for (const Particle& p : set.particles) {
    KernelSpec kf{family, p.state.theta.sigma_f2, p.state.theta.lf};
    Vector noise = p.state.v.array().exp().matrix();
    PredictiveMoments pm =
        gp_conditional(kf, data.points, data.values, 0.0, noise, candidate, jitter);
    m += p.weight * pm.mean;
  }
  return m;
}

// Expected integrated predictive variance for one candidate, evaluated from a
// particle set whose noise paths were already augmented at the candidate.
// The plug-in pair (candidate, y_hat) is appended to the data and the nested
// Monte Carlo estimate is formed directly; draw streams follow the same
// derivation as the batch evaluator, so values agree up to factorization
// roundoff.
inline double eeimspe(const ParticleSet& augmented, const ObservationSet& data,
                      const DesignPoint& candidate, double y_hat, const DesignGrid& grid,
                      const WeightFunction& wf, int n2, KernelFamily family,
                      RngStream cand_stream, bool analytic_noise = false,
                      double jitter = kDefaultJitter) {
  const int m = data.size();
  const int g = grid.size();
  RngStream noise_stream = cand_stream.derive(lookahead_stream::kNoise);

  Matrix Xext(m + 1, data.dim());
  Xext.topRows(m) = data.points;
  Xext.row(m) = candidate.transpose();
  Vector yext(m + 1);
  yext.head(m) = data.values;
  yext(m) = y_hat;

  Vector c1 = Vector::Zero(g);
  Vector c2 = Vector::Zero(g);
  for (int i = 0; i < augmented.count(); ++i) {
    const Particle& p = augmented.particles[i];
    if (p.state.v.size() != m + 1)
      throw DimensionError("eeimspe: particle must hold the appended noise value");
    KernelSpec kf{family, p.state.theta.sigma_f2, p.state.theta.lf};
    KernelSpec kv{family, p.state.theta.sigma_v2, p.state.theta.lv};
    Vector noise = p.state.v.array().exp().matrix();
    GpConditioner f_cond(kf, Xext, yext, 0.0, noise, jitter);
    GpConditioner v_cond(kv, Xext, p.state.v, p.state.theta.mu0, Vector::Zero(m + 1), jitter);
    RngStream noise_i = noise_stream.derive(static_cast<std::uint64_t>(i));
    double w = p.weight;
    for (int t = 0; t < g; ++t) {
      DesignPoint xt = grid.point(t);
      PredictiveMoments fm = f_cond.moments_at(xt);
      PredictiveMoments vm = v_cond.moments_at(xt);
      double noise_mean;
      if (analytic_noise) {
        noise_mean = std::exp(vm.mean + 0.5 * vm.variance);
      } else {
        RngStream st = noise_i.derive(point_key(xt));
        double sd = std::sqrt(vm.variance);
        double acc = 0.0;
        for (int j = 0; j < n2; ++j) acc += std::exp(vm.mean + sd * st.normal());
        noise_mean = acc / n2;
      }
      c1(t) += w * (fm.variance + noise_mean + fm.mean * fm.mean);
      c2(t) += w * fm.mean;
    }
  }
  double total = 0.0;
  for (int t = 0; t < g; ++t) {
    double q_t = c1(t) - c2(t) * c2(t);
    if (q_t < 0.0) q_t = 0.0;
    total += wf.at(t) * q_t;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Full acquisition sweep
// ---------------------------------------------------------------------------

// Scores every grid point and returns the minimizer (lowest index on exact
// ties).  A candidate whose evaluation fails numerically scores +inf and is
// noted on stderr.  Candidates are scored independently on `workers`
// threads; every draw is keyed by candidate coordinates, so the result is
// identical for any worker count.
inline SelectResult select_next(const ParticleSet& set, const ObservationSet& data,
                                const DesignGrid& grid, const WeightFunction& wf, int n2,
                                KernelFamily family, RngStream iter_stream, int workers = 1,
                                bool analytic_noise = false, double jitter = kDefaultJitter) {
  if (wf.values.size() != 0 && wf.values.size() != grid.size())
    throw DimensionError("select_next: weight function length must match grid");
  LookaheadEvaluator ev(set, data, grid, family, n2, analytic_noise, jitter);
  const int g = grid.size();
  const int n1 = set.count();

  std::vector<double> values(g), yhats(g);
  Matrix augments(g, n1);
  std::vector<long> clamps(g, 0), evals(g, 0);

  std::atomic<int> next{0};
  auto work = [&]() {
    while (true) {
      int c = next.fetch_add(1);
      if (c >= g) return;
      double q = ev.y_hat(c);
      yhats[c] = q;
      RngStream cs = iter_stream.derive(point_key(grid.point(c)));
      Vector aug(n1);
      try {
        values[c] = ev.eeimspe_at(c, q, wf, cs, &aug, &clamps[c], &evals[c]);
      } catch (const std::exception& e) {
        std::fprintf(stderr, "[duogp] note: candidate %d failed (%s); excluded\n", c, e.what());
        values[c] = std::numeric_limits<double>::infinity();
        aug.setZero();
      }
      augments.row(c) = aug.transpose();
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  SelectResult res;
  res.report.scores.resize(g);
  for (int c = 0; c < g; ++c) {
    res.report.scores[c] = {c, values[c], yhats[c]};
    res.report.clamped += clamps[c];
    res.report.evaluations += evals[c];
    if (res.index < 0 || values[c] < res.value) {
      res.index = c;
      res.value = values[c];
    }
  }
  if (res.index < 0 || !std::isfinite(res.value))
    throw NotPositiveDefinite("select_next: every candidate failed");
  res.report.selected_index = res.index;
  res.point = grid.point(res.index);
  res.y_hat = yhats[res.index];
  res.augment_draws = augments.row(res.index).transpose();
  return res;
}

// ---------------------------------------------------------------------------
// Constant-noise variant
// ---------------------------------------------------------------------------

// Lookahead scoring for the constant-noise model: draws are over
// hyperparameters only (equal weights), the predictive adds sigma_v^2
// directly, and no noise-path simulation is needed.
class HomoLookaheadEvaluator {
 public:
  HomoLookaheadEvaluator(const std::vector<HomoParameters>& draws, const ObservationSet& data,
                         const DesignGrid& grid, KernelFamily family,
                         double jitter = kDefaultJitter, bool with_gram = true)
      : grid_(grid), family_(family), jitter_(jitter), m_(data.size()), g_(grid.size()) {
    const int d = grid.dim();
    std::vector<Matrix> xd(d, Matrix(m_, g_));
    for (int h = 0; h < d; ++h)
      for (int i = 0; i < m_; ++i)
        for (int t = 0; t < g_; ++t) {
          double diff = data.points(i, h) - grid.points()(t, h);
          xd[h](i, t) = diff * diff;
        }
    caches_.resize(draws.size());
    for (size_t i = 0; i < draws.size(); ++i) {
      const HomoParameters& p = draws[i];
      Cache& c = caches_[i];
      c.sf2 = p.sigma_f2;
      c.sv2 = p.sigma_v2;
      c.lf = p.lf;
      KernelSpec kf{family_, p.sigma_f2, p.lf};
      Matrix A = cov_matrix(kf, data.points, 0.0);
      A.diagonal().array() += p.sigma_v2;
      CholFactor L = chol_factor_jittered(A, jitter_);
      Matrix s2 = xd[0] * (1.0 / (p.lf(0) * p.lf(0)));
      for (int h = 1; h < d; ++h) s2 += xd[h] * (1.0 / (p.lf(h) * p.lf(h)));
      Matrix cross;
      if (family_ == KernelFamily::SquaredExponential) {
        cross = p.sigma_f2 * (-0.5 * s2.array()).exp().matrix();
      } else {
        const double sqrt3 = 1.7320508075688772935;
        Matrix r = s2.array().sqrt().matrix();
        cross = p.sigma_f2 * ((1.0 + sqrt3 * r.array()) * (-sqrt3 * r.array()).exp()).matrix();
      }
      c.Z = L.solve_lower(cross);
      c.w = L.solve_lower(data.values);
      c.zw = c.Z.transpose() * c.w;
      c.zz = c.Z.colwise().squaredNorm().transpose();
      if (with_gram) c.M.noalias() = c.Z.transpose() * c.Z;
    }
  }

  [[nodiscard]] int draw_count() const { return static_cast<int>(caches_.size()); }

  [[nodiscard]] double y_hat(int c) const {
    double m = 0.0;
    for (const Cache& pc : caches_) m += pc.zw(c);
    return m / draw_count();
  }

  double eeimspe_at(int c, double q, const WeightFunction& wf, long* clamped,
                    long* evaluations) const {
    const int n1 = draw_count();
    Vector c1 = Vector::Zero(g_);
    Vector c2 = Vector::Zero(g_);
    Vector kfc(g_), m_row(g_);
    for (const Cache& pc : caches_) {
      cross_row(pc, c, kfc);
      m_row = pc.M.row(c).transpose();
      double ccf2 = pc.sf2 + pc.sv2 + jitter_ - pc.zz(c);
      if (!(ccf2 > 0.0))
        throw NotPositiveDefinite("candidate extension lost positive definiteness");
      double ccf = std::sqrt(ccf2);
      double uf = (q - pc.zw(c)) / ccf;
      for (int t = 0; t < g_; ++t) {
        double zf = (kfc(t) - m_row(t)) / ccf;
        double mean_t = pc.zw(t) + zf * uf;
        double var_t = pc.sf2 + pc.sv2 - pc.zz(t) - zf * zf;
        if (var_t < 0.0) var_t = 0.0;
        c1(t) += var_t + mean_t * mean_t;
        c2(t) += mean_t;
      }
    }
    double total = 0.0;
    for (int t = 0; t < g_; ++t) {
      double q_t = c1(t) / n1 - (c2(t) / n1) * (c2(t) / n1);
      if (evaluations) ++*evaluations;
      if (q_t < 0.0) {
        q_t = 0.0;
        if (clamped) ++*clamped;
      }
      total += wf.at(t) * q_t;
    }
    return total;
  }

  // Predictive moments of Y at grid point t under draw i (used directly by
  // the reduction checks and by prediction surfaces).
  [[nodiscard]] PredictiveMoments predictive(int i, int t) const {
    const Cache& pc = caches_[i];
    double var = pc.sf2 + pc.sv2 - pc.zz(t);
    return {pc.zw(t), var < 0.0 ? 0.0 : var};
  }

  void surfaces(Vector& mean, Vector& var_latent, Vector& log_noise) const {
    mean = Vector::Zero(g_);
    var_latent = Vector::Zero(g_);
    log_noise = Vector::Zero(g_);
    Vector second = Vector::Zero(g_);
    double w = 1.0 / draw_count();
    for (const Cache& pc : caches_) {
      for (int t = 0; t < g_; ++t) {
        double m = pc.zw(t);
        double lv = pc.sf2 - pc.zz(t);
        if (lv < 0.0) lv = 0.0;
        mean(t) += w * m;
        second(t) += w * m * m;
        var_latent(t) += w * lv;
        log_noise(t) += w * std::log(pc.sv2);
      }
    }
    for (int t = 0; t < g_; ++t) {
      double spread = second(t) - mean(t) * mean(t);
      if (spread > 0.0) var_latent(t) += spread;
    }
  }

 private:
  struct Cache {
    Matrix Z, M;
    Vector w, zw, zz;
    double sf2 = 1.0, sv2 = 1.0;
    Vector lf;
  };

  void cross_row(const Cache& pc, int c, Vector& kfc) const {
    const Matrix& P = grid_.points();
    const int d = grid_.dim();
    Vector s2 = Vector::Zero(g_);
    for (int h = 0; h < d; ++h) {
      double xc = P(c, h);
      double il = 1.0 / (pc.lf(h) * pc.lf(h));
      for (int t = 0; t < g_; ++t) {
        double diff = xc - P(t, h);
        s2(t) += diff * diff * il;
      }
    }
    if (family_ == KernelFamily::SquaredExponential) {
      kfc = pc.sf2 * (-0.5 * s2.array()).exp().matrix();
    } else {
      const double sqrt3 = 1.7320508075688772935;
      kfc = pc.sf2 * ((1.0 + sqrt3 * s2.array().sqrt()) *
                      (-sqrt3 * s2.array().sqrt()).exp()).matrix();
    }
  }

  const DesignGrid& grid_;
  KernelFamily family_;
  double jitter_;
  int m_, g_;
  std::vector<Cache> caches_;
};

inline SelectResult select_next_homo(const std::vector<HomoParameters>& draws,
                                     const ObservationSet& data, const DesignGrid& grid,
                                     const WeightFunction& wf, KernelFamily family,
                                     int workers = 1, double jitter = kDefaultJitter) {
  if (wf.values.size() != 0 && wf.values.size() != grid.size())
    throw DimensionError("select_next_homo: weight function length must match grid");
  HomoLookaheadEvaluator ev(draws, data, grid, family, jitter);
  const int g = grid.size();
  std::vector<double> values(g), yhats(g);
  std::vector<long> clamps(g, 0), evals(g, 0);

  std::atomic<int> next{0};
  auto work = [&]() {
    while (true) {
      int c = next.fetch_add(1);
      if (c >= g) return;
      double q = ev.y_hat(c);
      yhats[c] = q;
      try {
        values[c] = ev.eeimspe_at(c, q, wf, &clamps[c], &evals[c]);
      } catch (const std::exception& e) {
        std::fprintf(stderr, "[duogp] note: candidate %d failed (%s); excluded\n", c, e.what());
        values[c] = std::numeric_limits<double>::infinity();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  SelectResult res;
  res.report.scores.resize(g);
  for (int c = 0; c < g; ++c) {
    res.report.scores[c] = {c, values[c], yhats[c]};
    res.report.clamped += clamps[c];
    res.report.evaluations += evals[c];
    if (res.index < 0 || values[c] < res.value) {
      res.index = c;
      res.value = values[c];
    }
  }
  if (res.index < 0 || !std::isfinite(res.value))
    throw NotPositiveDefinite("select_next_homo: every candidate failed");
  res.report.selected_index = res.index;
  res.point = grid.point(res.index);
  res.y_hat = yhats[res.index];
  res.augment_draws = Vector();
  return res;
}

}  // namespace duogp
