#pragma once

#include <algorithm>
#include <cstdio>
#include <optional>
#include <vector>

#include "duogp/model.hpp"
#include "duogp/nuts.hpp"

namespace duogp {

// Mean-square response level, the natural starting amplitude for a zero-mean
// GP over the observations.  Starting sigma_f^2 at its prior scale instead
// can begin the chain with an enormous data misfit whose first gradients
// catapult the noise field onto a flat plateau it never returns from.
inline double response_scale(const Vector& y, double fallback) {
  if (y.size() == 0) return fallback;
  double ms = y.squaredNorm() / static_cast<double>(y.size());
  return ms > 0.0 ? ms : fallback;
}

// Starting point for a posterior refresh, in unconstrained coordinates.
//
// Without history: data-scaled amplitude for the mean-response GP, prior-
// centered values everywhere else (mu0 and every v coordinate at the prior
// mean of mu0; sigma_v^2 at its prior scale beta/alpha; lengthscales at
// their Gamma prior mean).
//
// With history: the previous run's unconstrained posterior means are copied
// for every coordinate both runs share, and each newly appended v coordinate
// is set to the log-noise GP predictive mean at its point, conditioning
// sequentially on the previously filled values.
inline Vector warm_start_init(const Model& model,
                              const std::optional<Vector>& previous_mean = std::nullopt) {
  const int d = model.input_dim();
  const int m = model.size();
  const PriorSpec& pr = model.priors();
  Vector eta(model.dim());

  if (!previous_mean) {
    eta(0) = pr.mu0_mean;
    eta(1) = std::log(response_scale(model.values(), pr.beta_f / pr.alpha_f));
    eta(2) = std::log(pr.beta_v / pr.alpha_v);
    for (int h = 0; h < d; ++h) {
      eta(3 + h) = std::log(pr.lf[h].shape / pr.lf[h].rate);
      eta(3 + d + h) = std::log(pr.lv[h].shape / pr.lv[h].rate);
    }
    eta.tail(m).setConstant(pr.mu0_mean);
    return eta;
  }

  const Vector& prev = *previous_mean;
  const int m_prev = static_cast<int>(prev.size()) - 3 - 2 * d;
  if (m_prev < 0 || m_prev > m)
    throw DimensionError("warm_start_init: previous mean has incompatible length");
  eta.head(3 + 2 * d) = prev.head(3 + 2 * d);
  eta.segment(3 + 2 * d, m_prev) = prev.tail(m_prev);

  LatentState mean_state = from_unconstrained(prev, d);
  KernelSpec kv = model.v_kernel(mean_state.theta);
  for (int j = m_prev; j < m; ++j) {
    Matrix Xknown = model.points().topRows(j);
    Vector vknown = eta.segment(3 + 2 * d, j);
    PredictiveMoments pm = v_predictive(kv, mean_state.theta.mu0, Xknown, vknown,
                                        model.points().row(j).transpose(), model.jitter());
    eta(3 + 2 * d + j) = pm.mean;
  }
  return eta;
}

struct PosteriorFit {
  std::vector<LatentState> states;  // thinned post-burn-in draws
  Vector mean_unconstrained;        // whitened-coordinate means of the thinned draws
  NutsResult diagnostics;           // post_burnin kept only on request (whitened coords)
};

namespace detail {

// Maps a previous run's whitened posterior mean back to centered coordinates
// over the first points of the (possibly grown) model, so warm_start_init can
// apply its v-space contract: copy shared coordinates, then fill each new v
// at its log-noise predictive mean.
inline Vector centered_previous_mean(const Model& model, const Vector& prev_whitened) {
  const int d = model.input_dim();
  const int m_prev = static_cast<int>(prev_whitened.size()) - 3 - 2 * d;
  if (m_prev < 0 || m_prev > model.size())
    throw DimensionError("fit_posterior: warm start has incompatible length");
  LatentState s = from_unconstrained(prev_whitened, d);  // s.v holds innovations
  Matrix Xprev = model.points().topRows(m_prev);
  Matrix Kv = cov_matrix(model.v_kernel(s.theta), Xprev, 0.0);
  Eigen::LLT<Matrix> llt;
  if (!llt_with_escalation(Kv, model.jitter(), llt))
    throw NotPositiveDefinite("warm start: log-noise covariance not positive definite");
  Vector eta = prev_whitened;
  eta.tail(m_prev) = Vector::Constant(m_prev, s.theta.mu0) + llt.matrixL() * s.v;
  return eta;
}

}  // namespace detail

// One full chain over the paired-GP posterior.  The chain runs in the model's
// whitened coordinates (innovations of the log-noise field); draws are mapped
// back to (theta, v) states.  Warns (stderr) when more than 10% of
// post-burn-in iterations diverged.
inline PosteriorFit fit_posterior(const Model& model, const ChainSchedule& schedule,
                                  const std::optional<Vector>& warm, RngStream rng,
                                  bool keep_post_burnin = false) {
  LogDensityGrad target = [&model](const Vector& q, Vector& grad) {
    return model.log_joint_whitened(q, &grad);
  };
  std::optional<Vector> warm_centered;
  if (warm) warm_centered = detail::centered_previous_mean(model, *warm);
  Vector init = model.whiten(warm_start_init(model, warm_centered));
  NutsResult res = nuts_run(target, init, schedule, rng, keep_post_burnin);

  int post = schedule.total_iterations - schedule.burn_in;
  if (post > 0 && res.divergences > 0.10 * post)
    std::fprintf(stderr, "[duogp] warning: %d of %d post-burn-in iterations diverged\n",
                 res.divergences, post);

  PosteriorFit fit;
  fit.mean_unconstrained = Vector::Zero(model.dim());
  fit.states.reserve(res.draws.size());
  for (const Vector& q : res.draws) {
    fit.mean_unconstrained += q;
    fit.states.push_back(from_unconstrained(model.unwhiten(q), model.input_dim()));
  }
  if (!res.draws.empty()) fit.mean_unconstrained /= static_cast<double>(res.draws.size());
  fit.diagnostics = std::move(res);
  return fit;
}

// Coordinate-wise posterior median of the constrained hyperparameters over a
// set of unconstrained draws (used by the point-estimate strategy, which
// takes its medians over every post-burn-in draw rather than the thinned set).
inline Hyperparameters median_theta(const std::vector<Vector>& unconstrained_draws, int d) {
  if (unconstrained_draws.empty()) throw DimensionError("median_theta: no draws");
  const int head = 3 + 2 * d;
  auto median_of = [](std::vector<double>& xs) {
    std::sort(xs.begin(), xs.end());
    size_t n = xs.size();
    return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
  };
  Vector med(head);
  std::vector<double> buf(unconstrained_draws.size());
  for (int c = 0; c < head; ++c) {
    for (size_t k = 0; k < unconstrained_draws.size(); ++k) buf[k] = unconstrained_draws[k](c);
    med(c) = median_of(buf);
  }
  // Medians commute with the monotone exp transform, so medians taken in
  // unconstrained coordinates map back to the constrained medians.
  return from_unconstrained(med, d).theta;
}

struct HomoFit {
  std::vector<HomoParameters> draws;
  Vector mean_unconstrained;
  NutsResult diagnostics;
};

inline HomoFit fit_homo_posterior(const HomoModel& model, const ChainSchedule& schedule,
                                  const std::optional<Vector>& warm, RngStream rng) {
  LogDensityGrad target = [&model](const Vector& q, Vector& grad) {
    return model.log_joint_unconstrained(q, &grad);
  };
  Vector init;
  if (warm) {
    if (warm->size() != model.dim())
      throw DimensionError("fit_homo_posterior: warm start has wrong length");
    init = *warm;
  } else {
    const PriorSpec& pr = model.priors();
    init.resize(model.dim());
    init(0) = std::log(response_scale(model.values(), pr.beta_f / pr.alpha_f));
    init(1) = std::log(pr.beta_v / pr.alpha_v);
    for (int h = 0; h < model.input_dim(); ++h)
      init(2 + h) = std::log(pr.lf[h].shape / pr.lf[h].rate);
  }
  NutsResult res = nuts_run(target, init, schedule, rng, false);
  int post = schedule.total_iterations - schedule.burn_in;
  if (post > 0 && res.divergences > 0.10 * post)
    std::fprintf(stderr, "[duogp] warning: %d of %d post-burn-in iterations diverged\n",
                 res.divergences, post);
  HomoFit fit;
  fit.mean_unconstrained = Vector::Zero(model.dim());
  for (const Vector& q : res.draws) {
    fit.mean_unconstrained += q;
    fit.draws.push_back(homo_from_unconstrained(q));
  }
  if (!res.draws.empty()) fit.mean_unconstrained /= static_cast<double>(res.draws.size());
  fit.diagnostics = std::move(res);
  return fit;
}

}  // namespace duogp
