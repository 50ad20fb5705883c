#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "duogp/design.hpp"
#include "duogp/io.hpp"
#include "duogp/strategies.hpp"

namespace duogp {

// ---------------------------------------------------------------------------
// Synthetic heteroscedastic test problems
// ---------------------------------------------------------------------------

// 1-d problem on [-1.5, 0]: oscillatory mean with a quartic trend, and a
// smoothly varying noise standard deviation.
inline double f1(double x) {
  const double pi = 3.14159265358979323846;
  return 5.0 * std::sin(6.0 * pi * x) / std::cos(x) + std::pow(x - 1.0, 4);
}
inline double g1(double x) {
  const double pi = 3.14159265358979323846;
  double s = std::sin(1.5 * pi * x) + 1.1;
  return s * s;
}

// 2-d problem on [-2, 2] x [-1, 1]: a camelback-style surface with noise
// variance coupled to the response level.
inline double f2(double x1, double x2) {
  return (40.0 - 21.0 * x1 * x1 + 10.0 * std::pow(x1, 4) / 3.0) * x1 * x1 + 10.0 * x1 * x2 +
         (-40.0 + 40.0 * x2 * x2) * x2 * x2 + 80.0;
}
inline double g2(double x1, double x2) {
  const double pi = 3.14159265358979323846;
  const double sqrt10 = 3.1622776601683793320;
  double s = f2(x1, x2) / sqrt10 + sqrt10 * std::sin(x1 * x2 * pi / 6.0);
  return s * s;
}

// A stochastic simulator built from a mean surface and a noise-variance
// surface: observations are f(x) + sqrt(g(x)) * z with z standard normal.
struct SyntheticSimulator {
  std::function<double(const DesignPoint&)> f;
  std::function<double(const DesignPoint&)> g;
};

inline SyntheticSimulator oned_simulator() {
  return {[](const DesignPoint& x) { return f1(x(0)); },
          [](const DesignPoint& x) { return g1(x(0)); }};
}

inline SyntheticSimulator twod_simulator() {
  return {[](const DesignPoint& x) { return f2(x(0), x(1)); },
          [](const DesignPoint& x) { return g2(x(0), x(1)); }};
}

inline double simulate(const SyntheticSimulator& sim, const DesignPoint& x, RngStream& rng) {
  double g = sim.g(x);
  if (!(g >= 0.0)) throw ConfigError("simulate: noise variance surface must be nonnegative");
  return sim.f(x) + std::sqrt(g) * rng.normal();
}

// Root mean squared prediction error against the latent mean surface.
inline double rmse(const Vector& predicted, const Vector& truth) {
  if (predicted.size() != truth.size() || predicted.size() == 0)
    throw DimensionError("rmse: length mismatch");
  return std::sqrt((predicted - truth).squaredNorm() / predicted.size());
}

// ---------------------------------------------------------------------------
// Benchmark protocol
// ---------------------------------------------------------------------------

enum class InitialDesignKind { Uniform1d, LhdMaximin };

struct BenchSetup {
  DesignGrid grid;
  PriorSpec priors;
  KernelFamily kernel = KernelFamily::SquaredExponential;
  double jitter = kDefaultJitter;
  WeightFunction weight_fn;
  SyntheticSimulator sim;
  InitialDesignKind init_kind = InitialDesignKind::Uniform1d;
  int n0 = 0;  // 0 means the 10 * d convention
  int lhd_restarts = 1000;
  std::vector<StrategyConfig> strategies;
  int macro_reps = 1;
  std::uint64_t base_seed = 0;
  int rmse_stride = 10;
};

struct TracePoint {
  int iteration = 0;
  double rmse = 0.0;
};

// Everything recorded about one (strategy, macro-rep) run.
struct RunTrace {
  std::string label;
  int macro_rep = 0;
  std::vector<TracePoint> points;
  double final_rmse = 0.0;
  int refresh_count = 0;
  long clamped = 0;
  long evaluations = 0;
  double seconds = 0.0;
  std::vector<IterationRecord> records;
};

struct BenchResult {
  std::vector<RunTrace> traces;
};

// Per-iteration sink for structured logging (label, macro-rep, the iteration
// record, and the full candidate sweep behind it).
using BenchIterationLog =
    std::function<void(const std::string&, int, const IterationRecord&, const CriterionReport&)>;

// Runs every configured strategy over `macro_reps` macro-repetitions.
// Repetition m seeds all of its randomness from base_seed + m; the initial
// design and its observations are generated once per repetition and shared by
// every strategy, so strategies differ only in how they continue.  RMSE
// against the latent mean surface is recorded every `rmse_stride` iterations.
inline BenchResult run_benchmark(const BenchSetup& setup, const BenchIterationLog& log = nullptr) {
  if (setup.strategies.empty()) throw ConfigError("run_benchmark: no strategies configured");
  BenchResult result;
  const int d = setup.grid.dim();
  const int n0 = setup.n0 > 0 ? setup.n0 : default_initial_size(d);

  Vector truth(setup.grid.size());
  for (int t = 0; t < setup.grid.size(); ++t) truth(t) = setup.sim.f(setup.grid.point(t));

  for (int m = 0; m < setup.macro_reps; ++m) {
    RngStream rep_root(setup.base_seed + static_cast<std::uint64_t>(m));

    Matrix X0;
    if (setup.init_kind == InitialDesignKind::Uniform1d) {
      X0 = uniform_1d_design(setup.grid, n0);
    } else {
      X0 = lhd_maximin(setup.grid, n0, rep_root.derive(stream_role::kInitDesign),
                       setup.lhd_restarts);
    }
    Vector y0(n0);
    RngStream obs_stream = rep_root.derive(stream_role::kInitObserve);
    for (int i = 0; i < n0; ++i) {
      RngStream si = obs_stream.derive(static_cast<std::uint64_t>(i));
      y0(i) = simulate(setup.sim, X0.row(i).transpose(), si);
    }
    ObservationSet data0 = ObservationSet::initial(X0, y0);

    for (size_t js = 0; js < setup.strategies.size(); ++js) {
      auto t0 = std::chrono::steady_clock::now();
      RunSetup rs;
      rs.grid = setup.grid;
      rs.priors = setup.priors;
      rs.kernel = setup.kernel;
      rs.jitter = setup.jitter;
      rs.weight_fn = setup.weight_fn;
      rs.cfg = setup.strategies[js];
      rs.seed = rep_root.derive(stream_role::kStrategyRun).derive(js).stream_id();

      RngStream sim_stream = rep_root.derive(stream_role::kSimNoise).derive(js);

      RunTrace trace;
      trace.label = rs.cfg.effective_label();
      trace.macro_rep = m;

      SessionState s = session_init(rs, data0);
      while (s.iteration < s.setup.cfg.budget) {
        const PendingProposal& p = step_propose(s);
        CriterionReport report = p.report;  // kept for the log sink
        RngStream noise = sim_stream.derive(static_cast<std::uint64_t>(s.iteration));
        double y = simulate(setup.sim, p.point, noise);
        step_observe(s, y);
        if (log) log(trace.label, m, s.records.back(), report);
        if (setup.rmse_stride > 0 && s.iteration % setup.rmse_stride == 0) {
          PredictionSurfaces surf = predict_surfaces(s);
          trace.points.push_back({s.iteration, rmse(surf.mean, truth)});
        }
      }
      if (trace.points.empty() || trace.points.back().iteration != s.iteration) {
        PredictionSurfaces surf = predict_surfaces(s);
        trace.points.push_back({s.iteration, rmse(surf.mean, truth)});
      }
      trace.final_rmse = trace.points.back().rmse;
      trace.refresh_count = s.refresh_count;
      trace.clamped = s.clamped;
      trace.evaluations = s.evaluations;
      trace.seconds = detail::elapsed_seconds(t0);
      trace.records = std::move(s.records);
      result.traces.push_back(std::move(trace));
    }
  }
  return result;
}

// CSV trace: strategy,macro_rep,iteration,rmse — deterministic formatting,
// rows in (strategy-within-rep, iteration) run order.
inline std::string trace_csv(const BenchResult& result) {
  std::string out = "strategy,macro_rep,iteration,rmse\n";
  for (const RunTrace& tr : result.traces)
    for (const TracePoint& p : tr.points) {
      out += tr.label;
      out += ',';
      out += std::to_string(tr.macro_rep);
      out += ',';
      out += std::to_string(p.iteration);
      out += ',';
      out += format_double(p.rmse);
      out += '\n';
    }
  return out;
}

}  // namespace duogp
