#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "duogp/gp.hpp"
#include "duogp/model.hpp"

namespace duogp {

// One posterior draw kept alive between sampler refreshes: hyperparameters,
// the latent log-noise path over every observed point, and a normalized
// importance weight.
struct Particle {
  LatentState state;
  double weight = 0.0;
};

struct ParticleSet {
  std::vector<Particle> particles;
  bool degenerate = false;  // all updated weights underflowed; refresh forced

  [[nodiscard]] int count() const { return static_cast<int>(particles.size()); }

  [[nodiscard]] Vector weights() const {
    Vector w(count());
    for (int i = 0; i < count(); ++i) w(i) = particles[i].weight;
    return w;
  }

  static ParticleSet from_states(std::vector<LatentState> states) {
    ParticleSet set;
    double w = 1.0 / static_cast<double>(states.size());
    for (auto& s : states) set.particles.push_back({std::move(s), w});
    return set;
  }
};

// Effective sample size 1 / sum_i w_i^2 of the normalized weights.
inline double ess(const ParticleSet& set) {
  double s2 = 0.0;
  for (const Particle& p : set.particles) s2 += p.weight * p.weight;
  return s2 > 0.0 ? 1.0 / s2 : 1.0;
}

// Extends every particle's log-noise path with a conditional draw at `x`:
//   v_new^i ~ N( v-GP predictive under particle i at x ).
// Particle i consumes one normal from rng.derive(i), so the draw a particle
// receives does not depend on how many particles precede it.  Returns the
// drawn values in particle order.
inline Vector augment_v(ParticleSet& set, const Matrix& X, const DesignPoint& x,
                        KernelFamily family, RngStream rng, double jitter = kDefaultJitter) {
  Vector draws(set.count());
  for (int i = 0; i < set.count(); ++i) {
    Particle& p = set.particles[i];
    if (p.state.v.size() != X.rows())
      throw DimensionError("augment_v: particle path length does not match data");
    KernelSpec kv{family, p.state.theta.sigma_v2, p.state.theta.lv};
    PredictiveMoments pm = v_predictive(kv, p.state.theta.mu0, X, p.state.v, x, jitter);
    RngStream si = rng.derive(static_cast<std::uint64_t>(i));
    double draw = sample_scalar_normal(pm.mean, pm.variance, si);
    draws(i) = draw;
    p.state.v.conservativeResize(p.state.v.size() + 1);
    p.state.v(p.state.v.size() - 1) = draw;
  }
  return draws;
}

// Multiplies each weight by the predictive density of the new observation
// under that particle (mean-response moments at x_new given the previous
// data, plus the particle's freshly appended noise value), then renormalizes.
// Underflow of every weight marks the set degenerate and resets to uniform.
inline void sis_update(ParticleSet& set, const ObservationSet& data_before,
                       const DesignPoint& x_new, double y_new, KernelFamily family,
                       double jitter = kDefaultJitter) {
  const int m = data_before.size();
  std::vector<double> logw(set.count());
  double max_logw = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < set.count(); ++i) {
    Particle& p = set.particles[i];
    if (p.state.v.size() != m + 1)
      throw DimensionError("sis_update: particle must already hold the appended noise value");
    Vector v_old = p.state.v.head(m);
    Vector noise = v_old.array().exp().matrix();
    KernelSpec kf{family, p.state.theta.sigma_f2, p.state.theta.lf};
    PredictiveMoments pm = gp_conditional(kf, data_before.points, data_before.values, 0.0,
                                          noise, x_new, jitter);
    double var = pm.variance + std::exp(p.state.v(m));
    double ll = detail::normal_logpdf(y_new, pm.mean, var);
    double lw = p.weight > 0.0 ? std::log(p.weight) + ll
                               : -std::numeric_limits<double>::infinity();
    logw[i] = lw;
    if (lw > max_logw) max_logw = lw;
  }
  if (!std::isfinite(max_logw)) {
    // Total underflow: no particle explains the observation.  Reset to
    // uniform and let the caller force a sampler refresh.
    double u = 1.0 / set.count();
    for (Particle& p : set.particles) p.weight = u;
    set.degenerate = true;
    return;
  }
  double total = 0.0;
  for (int i = 0; i < set.count(); ++i) {
    logw[i] = std::exp(logw[i] - max_logw);
    total += logw[i];
  }
  for (int i = 0; i < set.count(); ++i) set.particles[i].weight = logw[i] / total;
  set.degenerate = false;
}

// Refreshes the particle set through `refit` when the effective sample size
// has fallen to tau * N1 or below (or the set is degenerate).  Returns
// whether a refresh happened.
inline bool maybe_refresh(ParticleSet& set, double tau,
                          const std::function<ParticleSet()>& refit) {
  if (set.degenerate || ess(set) <= tau * set.count()) {
    set = refit();
    return true;
  }
  return false;
}

}  // namespace duogp
