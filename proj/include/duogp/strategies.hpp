#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "duogp/criterion.hpp"
#include "duogp/design.hpp"
#include "duogp/fit.hpp"
#include "duogp/particles.hpp"

namespace duogp {

enum class Strategy { LaSis, LaEb, LaHomo };

inline std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::LaSis: return "la_sis";
    case Strategy::LaEb: return "la_eb";
    default: return "la_homo";
  }
}

struct StrategyConfig {
  Strategy strategy = Strategy::LaSis;
  std::string label;  // trace label; empty means the strategy name
  double tau = 0.8;   // refresh when ESS <= tau * n1 (sequential-update strategy)
  int n1 = 30;        // particles / noise paths / hyperparameter draws
  int n2 = 10;        // noise draws per (particle, target)
  int budget = 100;   // sequential observations
  ChainSchedule chain;
  bool analytic_noise = false;  // closed-form lognormal mean instead of draws
  int workers = 1;

  [[nodiscard]] std::string effective_label() const {
    return label.empty() ? strategy_name(strategy) : label;
  }
};

// Everything that defines one sequential-design run.
struct RunSetup {
  DesignGrid grid;
  PriorSpec priors;
  KernelFamily kernel = KernelFamily::SquaredExponential;
  double jitter = kDefaultJitter;
  WeightFunction weight_fn;
  StrategyConfig cfg;
  std::uint64_t seed = 0;
};

struct IterationRecord {
  int iteration = 0;        // 1-based sequential observation number
  int candidate_index = -1;
  DesignPoint point;
  double y = 0.0;
  double y_hat = 0.0;
  double criterion = 0.0;   // selected candidate's score
  double ess = 0.0;         // after the weight update (or path-weight ESS)
  bool refreshed = false;   // a full sampler run happened this iteration
  double seconds = 0.0;
};

struct PendingProposal {
  int candidate_index = -1;
  DesignPoint point;
  double y_hat = 0.0;
  double criterion = 0.0;
  Vector augment_draws;       // per-particle appended noise values (weighted strategies)
  double ess_lookahead = 0.0; // path-weight ESS (point-estimate strategy)
  double propose_seconds = 0.0;
  CriterionReport report;     // full candidate sweep, for structured run logs
};

// Complete state of one sequential run between steps: serializable, so an
// external loop can stop after any propose/observe and resume elsewhere.
struct SessionState {
  RunSetup setup;
  ObservationSet data;
  int iteration = 0;  // completed sequential observations
  std::optional<PendingProposal> pending;
  // Posterior state, by strategy:
  ParticleSet particles;                      // weighted noise-path strategy
  std::optional<Hyperparameters> theta_hat;   // point-estimate strategy
  std::vector<HomoParameters> homo_draws;     // constant-noise strategy
  Vector warm_mean;  // unconstrained posterior mean at the last sampler run
  std::vector<IterationRecord> records;
  long clamped = 0;
  long evaluations = 0;
  int refresh_count = 0;  // sampler runs after the initial fit

  [[nodiscard]] RngStream root() const { return RngStream(setup.seed); }
};

// Simulator hook: the observation at a design point for sequential iteration
// `iteration` (0-based).  The framework owns all other randomness.
using SimulatorHook = std::function<double(const DesignPoint&, int iteration)>;
using CheckpointHook = std::function<void(const SessionState&)>;

namespace detail {

inline double elapsed_seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Weighted noise-path set under fixed hyperparameters: paths drawn from the
// log-noise GP prior over the observed points, weighted by the marginal
// likelihood of the observations they imply.
inline ParticleSet draw_weighted_paths(const Hyperparameters& theta, const ObservationSet& data,
                                       KernelFamily family, double jitter, int n1,
                                       RngStream stream) {
  const int m = data.size();
  KernelSpec kv{family, theta.sigma_v2, theta.lv};
  KernelSpec kf{family, theta.sigma_f2, theta.lf};
  Matrix Bv = cov_matrix(kv, data.points, 0.0);
  CholFactor Lv = chol_factor_jittered(Bv, jitter);
  Vector mu = Vector::Constant(m, theta.mu0);
  Matrix Kf = cov_matrix(kf, data.points, 0.0);

  ParticleSet set;
  std::vector<double> logw(n1);
  double max_logw = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n1; ++i) {
    RngStream si = stream.derive(static_cast<std::uint64_t>(i));
    Vector v = sample_normal(mu, Lv, si);
    Matrix A = Kf;
    A.diagonal() += v.array().exp().matrix();
    double lw;
    try {
      CholFactor Lf = chol_factor_jittered(A, jitter);
      lw = mvn_logpdf(Vector::Zero(m), Lf, data.values);
    } catch (const NotPositiveDefinite&) {
      lw = -std::numeric_limits<double>::infinity();
    }
    logw[i] = lw;
    if (lw > max_logw) max_logw = lw;
    Particle p;
    p.state.theta = theta;
    p.state.v = v;
    p.weight = 0.0;
    set.particles.push_back(std::move(p));
  }
  if (!std::isfinite(max_logw)) {
    for (Particle& p : set.particles) p.weight = 1.0 / n1;
    set.degenerate = true;
    return set;
  }
  double total = 0.0;
  for (int i = 0; i < n1; ++i) {
    logw[i] = std::exp(logw[i] - max_logw);
    total += logw[i];
  }
  for (int i = 0; i < n1; ++i) set.particles[i].weight = logw[i] / total;
  return set;
}

inline Model make_model(const SessionState& s) {
  return Model(s.data.points, s.data.values, s.setup.priors, s.setup.kernel, s.setup.jitter);
}

// Full sampler run for the current data, warm-started from the last run's
// posterior mean; updates the strategy's posterior state.  `chain_key` keys
// the chain's stream by the data size it conditions on, so a resumed session
// reproduces the same chain.
inline void refresh_posterior(SessionState& s, int chain_key) {
  RngStream mcmc = s.root().derive(stream_role::kMcmc).derive(chain_key);
  std::optional<Vector> warm;
  if (s.warm_mean.size() > 0) warm = s.warm_mean;
  switch (s.setup.cfg.strategy) {
    case Strategy::LaSis: {
      Model model = make_model(s);
      PosteriorFit fit = fit_posterior(model, s.setup.cfg.chain, warm, mcmc, false);
      s.particles = ParticleSet::from_states(std::move(fit.states));
      s.warm_mean = fit.mean_unconstrained;
      break;
    }
    case Strategy::LaEb: {
      Model model = make_model(s);
      PosteriorFit fit = fit_posterior(model, s.setup.cfg.chain, warm, mcmc, true);
      s.theta_hat = median_theta(fit.diagnostics.post_burnin, model.input_dim());
      s.warm_mean = fit.mean_unconstrained;
      break;
    }
    case Strategy::LaHomo: {
      HomoModel model(s.data.points, s.data.values, s.setup.priors, s.setup.kernel,
                      s.setup.jitter);
      HomoFit fit = fit_homo_posterior(model, s.setup.cfg.chain, warm, mcmc);
      s.homo_draws = std::move(fit.draws);
      s.warm_mean = fit.mean_unconstrained;
      break;
    }
  }
}

}  // namespace detail

// Starts a session: binds the setup to the seed observations and runs the
// initial posterior fit.
inline SessionState session_init(RunSetup setup, ObservationSet initial_data) {
  if (initial_data.dim() != setup.grid.dim())
    throw DimensionError("session_init: data dimension does not match grid");
  SessionState s;
  s.setup = std::move(setup);
  s.data = std::move(initial_data);
  detail::refresh_posterior(s, 0);
  return s;
}

// Chooses the next design point.  Errors: ProtocolViolation if an observation
// is already pending, OutOfBudget past the configured budget.
inline const PendingProposal& step_propose(SessionState& s) {
  if (s.pending) throw ProtocolViolation("propose called while awaiting an observation");
  if (s.iteration >= s.setup.cfg.budget)
    throw OutOfBudget("sequential budget exhausted");
  auto t0 = std::chrono::steady_clock::now();
  RngStream its = s.root().derive(stream_role::kLookahead).derive(s.iteration);

  SelectResult sel;
  PendingProposal p;
  switch (s.setup.cfg.strategy) {
    case Strategy::LaSis: {
      sel = select_next(s.particles, s.data, s.setup.grid, s.setup.weight_fn, s.setup.cfg.n2,
                        s.setup.kernel, its, s.setup.cfg.workers, s.setup.cfg.analytic_noise,
                        s.setup.jitter);
      break;
    }
    case Strategy::LaEb: {
      RngStream paths = s.root().derive(stream_role::kEbPaths).derive(s.iteration);
      ParticleSet set = detail::draw_weighted_paths(*s.theta_hat, s.data, s.setup.kernel,
                                                    s.setup.jitter, s.setup.cfg.n1, paths);
      p.ess_lookahead = ess(set);
      sel = select_next(set, s.data, s.setup.grid, s.setup.weight_fn, s.setup.cfg.n2,
                        s.setup.kernel, its, s.setup.cfg.workers, s.setup.cfg.analytic_noise,
                        s.setup.jitter);
      break;
    }
    case Strategy::LaHomo: {
      sel = select_next_homo(s.homo_draws, s.data, s.setup.grid, s.setup.weight_fn,
                             s.setup.kernel, s.setup.cfg.workers, s.setup.jitter);
      break;
    }
  }
  p.candidate_index = sel.index;
  p.point = sel.point;
  p.y_hat = sel.y_hat;
  p.criterion = sel.value;
  p.augment_draws = sel.augment_draws;
  s.clamped += sel.report.clamped;
  s.evaluations += sel.report.evaluations;
  p.report = std::move(sel.report);
  p.propose_seconds = detail::elapsed_seconds(t0);
  s.pending = std::move(p);
  return *s.pending;
}

// Feeds back the observation for the pending proposal, updates the posterior
// state (weight update + conditional refresh, or a full re-fit), and closes
// the iteration.
inline void step_observe(SessionState& s, double y) {
  if (!s.pending) throw ProtocolViolation("observe called with no pending proposal");
  auto t0 = std::chrono::steady_clock::now();
  PendingProposal p = std::move(*s.pending);
  s.pending.reset();

  IterationRecord rec;
  rec.iteration = s.iteration + 1;
  rec.candidate_index = p.candidate_index;
  rec.point = p.point;
  rec.y = y;
  rec.y_hat = p.y_hat;
  rec.criterion = p.criterion;

  switch (s.setup.cfg.strategy) {
    case Strategy::LaSis: {
      // Append the exact noise draws the winning candidate used during search.
      for (int i = 0; i < s.particles.count(); ++i) {
        Vector& v = s.particles.particles[i].state.v;
        v.conservativeResize(v.size() + 1);
        v(v.size() - 1) = p.augment_draws(i);
      }
      ObservationSet before = s.data;  // weight update conditions on prior data
      sis_update(s.particles, before, p.point, y, s.setup.kernel, s.setup.jitter);
      rec.ess = ess(s.particles);
      s.data.append(p.point, y);
      double tau = s.setup.cfg.tau;
      bool refreshed = maybe_refresh(s.particles, tau, [&]() {
        SessionState& ss = s;
        detail::refresh_posterior(ss, ss.data.size() - ss.data.n0);
        return ss.particles;
      });
      rec.refreshed = refreshed;
      if (refreshed) ++s.refresh_count;
      break;
    }
    case Strategy::LaEb: {
      s.data.append(p.point, y);
      detail::refresh_posterior(s, s.data.size() - s.data.n0);
      rec.ess = p.ess_lookahead;
      rec.refreshed = true;
      ++s.refresh_count;
      break;
    }
    case Strategy::LaHomo: {
      s.data.append(p.point, y);
      detail::refresh_posterior(s, s.data.size() - s.data.n0);
      rec.ess = static_cast<double>(s.setup.cfg.n1);
      rec.refreshed = true;
      ++s.refresh_count;
      break;
    }
  }
  ++s.iteration;
  rec.seconds = p.propose_seconds + detail::elapsed_seconds(t0);
  s.records.push_back(std::move(rec));
}

// ---------------------------------------------------------------------------
// Prediction surfaces
// ---------------------------------------------------------------------------

struct PredictionSurfaces {
  Vector mean;        // posterior mean of the latent response over the grid
  Vector var_latent;  // posterior latent variance over the grid
  Vector log_noise;   // fitted log noise variance over the grid
};

inline PredictionSurfaces predict_surfaces(const SessionState& s) {
  PredictionSurfaces out;
  switch (s.setup.cfg.strategy) {
    case Strategy::LaSis: {
      LookaheadEvaluator ev(s.particles, s.data, s.setup.grid, s.setup.kernel, s.setup.cfg.n2,
                            s.setup.cfg.analytic_noise, s.setup.jitter, false);
      ev.surfaces(out.mean, out.var_latent, out.log_noise);
      break;
    }
    case Strategy::LaEb: {
      RngStream paths = s.root().derive(stream_role::kPredict).derive(s.iteration);
      ParticleSet set = detail::draw_weighted_paths(*s.theta_hat, s.data, s.setup.kernel,
                                                    s.setup.jitter, s.setup.cfg.n1, paths);
      LookaheadEvaluator ev(set, s.data, s.setup.grid, s.setup.kernel, s.setup.cfg.n2,
                            s.setup.cfg.analytic_noise, s.setup.jitter, false);
      ev.surfaces(out.mean, out.var_latent, out.log_noise);
      break;
    }
    case Strategy::LaHomo: {
      HomoLookaheadEvaluator ev(s.homo_draws, s.data, s.setup.grid, s.setup.kernel,
                                s.setup.jitter, false);
      ev.surfaces(out.mean, out.var_latent, out.log_noise);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Monolithic run loops (propose/observe under the hood, so a driven session
// reproduces them exactly)
// ---------------------------------------------------------------------------

inline SessionState run_strategy(RunSetup setup, ObservationSet initial_data,
                                 const SimulatorHook& simulate,
                                 const CheckpointHook& checkpoint = nullptr) {
  SessionState s = session_init(std::move(setup), std::move(initial_data));
  while (s.iteration < s.setup.cfg.budget) {
    const PendingProposal& p = step_propose(s);
    double y;
    try {
      y = simulate(p.point, s.iteration);
    } catch (...) {
      if (checkpoint) checkpoint(s);
      throw;
    }
    step_observe(s, y);
  }
  return s;
}

inline SessionState run_la_sis(RunSetup setup, ObservationSet initial_data,
                               const SimulatorHook& simulate,
                               const CheckpointHook& checkpoint = nullptr) {
  setup.cfg.strategy = Strategy::LaSis;
  return run_strategy(std::move(setup), std::move(initial_data), simulate, checkpoint);
}

inline SessionState run_la_eb(RunSetup setup, ObservationSet initial_data,
                              const SimulatorHook& simulate,
                              const CheckpointHook& checkpoint = nullptr) {
  setup.cfg.strategy = Strategy::LaEb;
  return run_strategy(std::move(setup), std::move(initial_data), simulate, checkpoint);
}

inline SessionState run_la_homo(RunSetup setup, ObservationSet initial_data,
                                const SimulatorHook& simulate,
                                const CheckpointHook& checkpoint = nullptr) {
  setup.cfg.strategy = Strategy::LaHomo;
  return run_strategy(std::move(setup), std::move(initial_data), simulate, checkpoint);
}

}  // namespace duogp
