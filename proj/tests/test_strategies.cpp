// Sequential-strategy session tests: protocol enforcement, refresh behavior
// per strategy, record bookkeeping, prediction surfaces, and determinism of
// the monolithic loop versus a manually driven session.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "duogp/design.hpp"
#include "duogp/errors.hpp"
#include "duogp/model.hpp"
#include "duogp/rng.hpp"
#include "duogp/strategies.hpp"

namespace dg = duogp;

namespace {

constexpr std::uint64_t kSeed = 60601;

// Tiny but honest run setup: 7-point 1-d grid, 6 seed observations, 4
// particles from a short (but adapted) chain.
dg::RunSetup tiny_setup(dg::Strategy strategy, double tau, int budget,
                        std::uint64_t seed = kSeed) {
  dg::RunSetup rs;
  rs.grid = dg::make_grid(dg::Vector::Constant(1, -1.5), dg::Vector::Constant(1, 0.0),
                          dg::Vector::Constant(1, 0.25));
  rs.priors = dg::default_priors(dg::Vector::Constant(1, 0.25));
  rs.kernel = dg::KernelFamily::SquaredExponential;
  rs.cfg.strategy = strategy;
  rs.cfg.tau = tau;
  rs.cfg.n1 = 4;
  rs.cfg.n2 = 2;
  rs.cfg.budget = budget;
  rs.cfg.chain = dg::ChainSchedule{400, 200, 50};
  rs.seed = seed;
  return rs;
}

dg::ObservationSet seed_data(const dg::RunSetup& rs, int n0) {
  dg::Matrix X = dg::uniform_1d_design(rs.grid, n0);
  dg::Vector y(n0);
  dg::RngStream obs = dg::RngStream(rs.seed).derive(dg::stream_role::kInitObserve);
  for (int i = 0; i < n0; ++i)
    y(i) = std::sin(2.0 * X(i, 0)) + 0.1 * obs.derive(static_cast<std::uint64_t>(i)).normal();
  return dg::ObservationSet::initial(X, y);
}

double hook_value(const dg::RunSetup& rs, const dg::DesignPoint& x, int iteration) {
  dg::RngStream ns = dg::RngStream(rs.seed)
                         .derive(dg::stream_role::kSimNoise)
                         .derive(static_cast<std::uint64_t>(iteration));
  return std::sin(2.0 * x(0)) + 0.1 * ns.normal();
}

}  // namespace

TEST_CASE("session_init fits the posterior and rejects mismatched data", "[strategies]") {
  dg::RunSetup rs = tiny_setup(dg::Strategy::LaSis, 0.8, 3);
  dg::ObservationSet data = seed_data(rs, 6);

  dg::SessionState s = dg::session_init(rs, data);
  REQUIRE(s.iteration == 0);
  REQUIRE(s.records.empty());
  REQUIRE_FALSE(s.pending.has_value());
  REQUIRE(s.refresh_count == 0);  // the initial fit is not a refresh
  REQUIRE(s.particles.count() == rs.cfg.chain.retained_draws());
  REQUIRE(s.data.size() == 6);
  REQUIRE(s.data.n0 == 6);

  dg::Matrix X2(2, 2);
  X2.setZero();
  dg::Vector y2 = dg::Vector::Zero(2);
  REQUIRE_THROWS_AS(dg::session_init(rs, dg::ObservationSet::initial(X2, y2)),
                    dg::DimensionError);
}

TEST_CASE("propose/observe protocol violations throw", "[strategies]") {
  dg::RunSetup rs = tiny_setup(dg::Strategy::LaSis, 0.0, 1);
  dg::SessionState s = dg::session_init(rs, seed_data(rs, 6));

  REQUIRE_THROWS_AS(dg::step_observe(s, 0.0), dg::ProtocolViolation);

  const dg::PendingProposal& p = dg::step_propose(s);
  REQUIRE(p.candidate_index >= 0);
  REQUIRE(p.candidate_index < rs.grid.size());
  REQUIRE_THROWS_AS(dg::step_propose(s), dg::ProtocolViolation);

  dg::step_observe(s, hook_value(rs, p.point, 0));
  REQUIRE(s.iteration == 1);
  REQUIRE_THROWS_AS(dg::step_propose(s), dg::OutOfBudget);
}

TEST_CASE("iteration records and data growth track the sequential loop", "[strategies]") {
  dg::RunSetup rs = tiny_setup(dg::Strategy::LaSis, 1.0, 3);
  dg::SessionState s =
      dg::run_la_sis(rs, seed_data(rs, 6),
                     [&](const dg::DesignPoint& x, int it) { return hook_value(rs, x, it); });

  REQUIRE(s.iteration == 3);
  REQUIRE(s.records.size() == 3);
  REQUIRE(s.data.size() == 6 + 3);
  REQUIRE(s.data.n0 == 6);
  REQUIRE(s.evaluations > 0);
  REQUIRE(s.clamped >= 0);
  for (int k = 0; k < 3; ++k) {
    const dg::IterationRecord& rec = s.records[k];
    REQUIRE(rec.iteration == k + 1);
    REQUIRE(rec.candidate_index >= 0);
    REQUIRE(rec.candidate_index < rs.grid.size());
    REQUIRE(rec.point == rs.grid.point(rec.candidate_index));
    REQUIRE(rec.y == s.data.values(6 + k));
    REQUIRE(std::isfinite(rec.y_hat));
    REQUIRE(rec.criterion >= 0.0);
    REQUIRE(rec.ess >= 1.0);
    REQUIRE(rec.ess <= rs.cfg.n1 + 1e-12);
    REQUIRE(rec.seconds >= 0.0);
    // tau = 1: ESS <= n1 always holds, so every iteration refreshes.
    REQUIRE(rec.refreshed);
  }
  REQUIRE(s.refresh_count == 3);
  // Each particle's noise path covers every observation.
  for (const dg::Particle& p : s.particles.particles) REQUIRE(p.state.v.size() == s.data.size());
}

TEST_CASE("tau = 0 never refreshes on healthy weights", "[strategies]") {
  dg::RunSetup rs = tiny_setup(dg::Strategy::LaSis, 0.0, 3);
  dg::SessionState s =
      dg::run_la_sis(rs, seed_data(rs, 6),
                     [&](const dg::DesignPoint& x, int it) { return hook_value(rs, x, it); });
  REQUIRE(s.refresh_count == 0);
  for (const dg::IterationRecord& rec : s.records) REQUIRE_FALSE(rec.refreshed);
  // Without refreshes the particle paths still grew by one entry per step.
  for (const dg::Particle& p : s.particles.particles) REQUIRE(p.state.v.size() == 6 + 3);
}

TEST_CASE("point-estimate strategy refits every iteration", "[strategies]") {
  dg::RunSetup rs = tiny_setup(dg::Strategy::LaEb, 0.8, 2);
  dg::SessionState s =
      dg::run_la_eb(rs, seed_data(rs, 6),
                    [&](const dg::DesignPoint& x, int it) { return hook_value(rs, x, it); });
  REQUIRE(s.theta_hat.has_value());
  REQUIRE(s.theta_hat->sigma_f2 > 0.0);
  REQUIRE(s.theta_hat->sigma_v2 > 0.0);
  REQUIRE(s.refresh_count == 2);
  for (const dg::IterationRecord& rec : s.records) {
    REQUIRE(rec.refreshed);
    REQUIRE(rec.ess >= 1.0);  // path-weight ESS from the lookahead draw set
    REQUIRE(rec.ess <= rs.cfg.n1 + 1e-12);
  }
}

TEST_CASE("constant-noise strategy refits every iteration with fixed draw count",
          "[strategies]") {
  dg::RunSetup rs = tiny_setup(dg::Strategy::LaHomo, 0.8, 2);
  dg::SessionState s =
      dg::run_la_homo(rs, seed_data(rs, 6),
                      [&](const dg::DesignPoint& x, int it) { return hook_value(rs, x, it); });
  REQUIRE(s.homo_draws.size() ==
          static_cast<std::size_t>(rs.cfg.chain.retained_draws()));
  REQUIRE(s.refresh_count == 2);
  for (const dg::IterationRecord& rec : s.records) {
    REQUIRE(rec.refreshed);
    REQUIRE(rec.ess == static_cast<double>(rs.cfg.n1));
  }
  for (const dg::HomoParameters& hp : s.homo_draws) {
    REQUIRE(hp.sigma_f2 > 0.0);
    REQUIRE(hp.sigma_v2 > 0.0);
    REQUIRE((hp.lf.array() > 0.0).all());
  }
}

TEST_CASE("prediction surfaces are well-formed for every strategy", "[strategies]") {
  for (dg::Strategy strat : {dg::Strategy::LaSis, dg::Strategy::LaEb, dg::Strategy::LaHomo}) {
    dg::RunSetup rs = tiny_setup(strat, 0.8, 1);
    dg::SessionState s = dg::run_strategy(
        rs, seed_data(rs, 6),
        [&](const dg::DesignPoint& x, int it) { return hook_value(rs, x, it); });
    dg::PredictionSurfaces ps = dg::predict_surfaces(s);
    REQUIRE(ps.mean.size() == rs.grid.size());
    REQUIRE(ps.var_latent.size() == rs.grid.size());
    REQUIRE(ps.log_noise.size() == rs.grid.size());
    for (int t = 0; t < rs.grid.size(); ++t) {
      REQUIRE(std::isfinite(ps.mean(t)));
      REQUIRE(ps.var_latent(t) >= 0.0);
      REQUIRE(std::isfinite(ps.log_noise(t)));
    }
    // Surfaces are a pure function of the session state.
    dg::PredictionSurfaces again = dg::predict_surfaces(s);
    REQUIRE(ps.mean == again.mean);
    REQUIRE(ps.var_latent == again.var_latent);
    REQUIRE(ps.log_noise == again.log_noise);
  }
}

TEST_CASE("monolithic runs match manually driven sessions exactly", "[strategies]") {
  dg::RunSetup rs = tiny_setup(dg::Strategy::LaSis, 1.0, 3);
  auto hook = [&](const dg::DesignPoint& x, int it) { return hook_value(rs, x, it); };

  dg::SessionState mono = dg::run_la_sis(rs, seed_data(rs, 6), hook);

  dg::SessionState driven = dg::session_init(rs, seed_data(rs, 6));
  while (driven.iteration < rs.cfg.budget) {
    const dg::PendingProposal& p = dg::step_propose(driven);
    double y = hook(p.point, driven.iteration);
    dg::step_observe(driven, y);
  }

  REQUIRE(mono.records.size() == driven.records.size());
  for (std::size_t k = 0; k < mono.records.size(); ++k) {
    REQUIRE(mono.records[k].candidate_index == driven.records[k].candidate_index);
    REQUIRE(mono.records[k].y == driven.records[k].y);
    REQUIRE(mono.records[k].y_hat == driven.records[k].y_hat);
    REQUIRE(mono.records[k].criterion == driven.records[k].criterion);
    REQUIRE(mono.records[k].ess == driven.records[k].ess);
    REQUIRE(mono.records[k].refreshed == driven.records[k].refreshed);
  }
  REQUIRE(mono.data.points == driven.data.points);
  REQUIRE(mono.data.values == driven.data.values);
  dg::PredictionSurfaces pm = dg::predict_surfaces(mono);
  dg::PredictionSurfaces pd = dg::predict_surfaces(driven);
  REQUIRE(pm.mean == pd.mean);
  REQUIRE(pm.var_latent == pd.var_latent);
  REQUIRE(pm.log_noise == pd.log_noise);
}

TEST_CASE("a budget of one observation completes cleanly", "[strategies]") {
  dg::RunSetup rs = tiny_setup(dg::Strategy::LaSis, 0.0, 1);
  dg::SessionState s =
      dg::run_la_sis(rs, seed_data(rs, 6),
                     [&](const dg::DesignPoint& x, int it) { return hook_value(rs, x, it); });
  REQUIRE(s.iteration == 1);
  REQUIRE(s.records.size() == 1);
  REQUIRE(s.data.size() == 7);
}

TEST_CASE("a simulator failure checkpoints the pending state and propagates", "[strategies]") {
  dg::RunSetup rs = tiny_setup(dg::Strategy::LaSis, 0.0, 3);
  int checkpoints = 0;
  int pending_at_checkpoint = -1;
  auto failing = [&](const dg::DesignPoint& x, int it) -> double {
    if (it == 1) throw std::runtime_error("simulator crashed");
    return hook_value(rs, x, it);
  };
  auto checkpoint = [&](const dg::SessionState& s) {
    ++checkpoints;
    pending_at_checkpoint = s.pending.has_value() ? 1 : 0;
    REQUIRE(s.iteration == 1);  // first observation landed, second was pending
  };
  REQUIRE_THROWS_AS(dg::run_la_sis(rs, seed_data(rs, 6), failing, checkpoint),
                    std::runtime_error);
  REQUIRE(checkpoints == 1);
  REQUIRE(pending_at_checkpoint == 1);
}
