// Synthetic test-problem and benchmark-protocol tests: frozen surface values,
// simulator moments, RMSE, the trace CSV format, and a miniature end-to-end
// benchmark run.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "duogp/model.hpp"
#include "duogp/testbed.hpp"

namespace dg = duogp;

TEST_CASE("1-d mean and noise surfaces reproduce frozen values", "[testbed]") {
  REQUIRE(dg::f1(0.0) == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(dg::f1(-1.0) == Catch::Approx(16.0).margin(1e-12));
  // x = -0.5: sin(-3 pi) = 0, so only the quartic trend remains.
  REQUIRE(dg::f1(-0.5) == Catch::Approx(std::pow(-1.5, 4)).margin(1e-12));
  REQUIRE(dg::g1(0.0) == Catch::Approx(1.21).margin(1e-12));
  // x = -1: sin(-1.5 pi) = 1, so the noise std peaks at 2.1.
  REQUIRE(dg::g1(-1.0) == Catch::Approx(4.41).margin(1e-12));
  REQUIRE(dg::g1(-1.5) > 0.0);
}

TEST_CASE("2-d mean and noise surfaces reproduce frozen values", "[testbed]") {
  REQUIRE(dg::f2(0.0, 0.0) == Catch::Approx(80.0).margin(1e-12));
  REQUIRE(dg::f2(1.0, 1.0) == Catch::Approx(112.33333333333333).margin(1e-10));
  REQUIRE(dg::f2(-1.0, 1.0) == Catch::Approx(92.33333333333333).margin(1e-10));
  REQUIRE(dg::g2(0.0, 0.0) == Catch::Approx(640.0).margin(1e-9));
  // The noise variance is a perfect square, hence nonnegative everywhere.
  for (double x1 : {-2.0, -1.0, 0.5, 2.0})
    for (double x2 : {-1.0, 0.0, 1.0}) REQUIRE(dg::g2(x1, x2) >= 0.0);
}

TEST_CASE("simulate draws f(x) + sqrt(g(x)) z from the caller's stream", "[testbed]") {
  dg::SyntheticSimulator sim = dg::oned_simulator();
  dg::DesignPoint x = dg::Vector::Constant(1, -0.75);

  dg::RngStream probe(77);
  double z = probe.normal();
  dg::RngStream run(77);
  double y = dg::simulate(sim, x, run);
  REQUIRE(y == dg::f1(-0.75) + std::sqrt(dg::g1(-0.75)) * z);

  // Monte Carlo moments match the surfaces.
  const int n = 20000;
  double mean = 0.0, second = 0.0;
  for (int i = 0; i < n; ++i) {
    dg::RngStream si = dg::RngStream(4200).derive(static_cast<std::uint64_t>(i));
    double yi = dg::simulate(sim, x, si);
    mean += yi;
    second += yi * yi;
  }
  mean /= n;
  double var = second / n - mean * mean;
  REQUIRE(mean == Catch::Approx(dg::f1(-0.75)).margin(0.025));
  REQUIRE(var == Catch::Approx(dg::g1(-0.75)).epsilon(0.05));
}

TEST_CASE("simulate rejects invalid noise surfaces", "[testbed]") {
  dg::SyntheticSimulator bad{[](const dg::DesignPoint&) { return 0.0; },
                             [](const dg::DesignPoint&) { return -1.0; }};
  dg::RngStream rng(1);
  dg::DesignPoint x = dg::Vector::Zero(1);
  REQUIRE_THROWS_AS(dg::simulate(bad, x, rng), dg::ConfigError);
  dg::SyntheticSimulator nan_g{[](const dg::DesignPoint&) { return 0.0; },
                               [](const dg::DesignPoint&) { return std::nan(""); }};
  REQUIRE_THROWS_AS(dg::simulate(nan_g, x, rng), dg::ConfigError);
}

TEST_CASE("rmse matches the frozen hand value and validates lengths", "[testbed]") {
  dg::Vector pred(2), truth(2);
  pred << 1.0, 2.0;
  truth << 2.0, 4.0;
  REQUIRE(dg::rmse(pred, truth) == Catch::Approx(std::sqrt(2.5)).margin(1e-15));
  REQUIRE(dg::rmse(pred, pred) == 0.0);

  dg::Vector three = dg::Vector::Zero(3);
  REQUIRE_THROWS_AS(dg::rmse(pred, three), dg::DimensionError);
  dg::Vector empty;
  REQUIRE_THROWS_AS(dg::rmse(empty, empty), dg::DimensionError);
}

TEST_CASE("trace CSV uses the documented header and run order", "[testbed]") {
  dg::BenchResult result;
  dg::RunTrace a;
  a.label = "la_sis";
  a.macro_rep = 0;
  a.points = {{10, 0.5}, {20, 0.25}};
  dg::RunTrace b;
  b.label = "la_homo";
  b.macro_rep = 1;
  b.points = {{10, 1.5}};
  result.traces = {a, b};

  REQUIRE(dg::trace_csv(result) ==
          "strategy,macro_rep,iteration,rmse\n"
          "la_sis,0,10,0.5\n"
          "la_sis,0,20,0.25\n"
          "la_homo,1,10,1.5\n");
}

namespace {

dg::BenchSetup mini_bench(std::uint64_t seed) {
  dg::BenchSetup bs;
  bs.grid = dg::make_grid(dg::Vector::Constant(1, -1.5), dg::Vector::Constant(1, 0.0),
                          dg::Vector::Constant(1, 0.25));
  bs.priors = dg::default_priors(dg::Vector::Constant(1, 0.25));
  bs.sim = dg::oned_simulator();
  bs.init_kind = dg::InitialDesignKind::Uniform1d;
  bs.n0 = 6;
  bs.macro_reps = 1;
  bs.base_seed = seed;
  bs.rmse_stride = 1;

  dg::StrategyConfig sis;
  sis.strategy = dg::Strategy::LaSis;
  sis.tau = 0.0;
  sis.n1 = 4;
  sis.n2 = 2;
  sis.budget = 2;
  sis.chain = dg::ChainSchedule{400, 200, 50};
  dg::StrategyConfig homo = sis;
  homo.strategy = dg::Strategy::LaHomo;
  bs.strategies = {sis, homo};
  return bs;
}

}  // namespace

TEST_CASE("a miniature benchmark produces complete, deterministic traces", "[testbed]") {
  dg::BenchSetup bs = mini_bench(9001);

  int log_calls = 0;
  std::vector<std::string> log_labels;
  dg::BenchResult res = dg::run_benchmark(
      bs, [&](const std::string& label, int rep, const dg::IterationRecord& rec,
              const dg::CriterionReport& report) {
        ++log_calls;
        log_labels.push_back(label);
        REQUIRE(rep == 0);
        REQUIRE(rec.iteration >= 1);
        REQUIRE(rec.iteration <= 2);
        REQUIRE(static_cast<int>(report.scores.size()) == bs.grid.size());
        REQUIRE(report.selected_index == rec.candidate_index);
      });

  REQUIRE(res.traces.size() == 2);
  REQUIRE(log_calls == 4);  // two strategies x budget 2
  REQUIRE(log_labels == std::vector<std::string>{"la_sis", "la_sis", "la_homo", "la_homo"});

  REQUIRE(res.traces[0].label == "la_sis");
  REQUIRE(res.traces[1].label == "la_homo");
  for (const dg::RunTrace& tr : res.traces) {
    REQUIRE(tr.macro_rep == 0);
    // rmse_stride = 1: a point for every iteration, no duplicated final.
    REQUIRE(tr.points.size() == 2);
    REQUIRE(tr.points[0].iteration == 1);
    REQUIRE(tr.points[1].iteration == 2);
    REQUIRE(tr.final_rmse == tr.points.back().rmse);
    for (const dg::TracePoint& p : tr.points) {
      REQUIRE(std::isfinite(p.rmse));
      REQUIRE(p.rmse >= 0.0);
    }
    REQUIRE(tr.records.size() == 2);
    REQUIRE(tr.seconds >= 0.0);
    REQUIRE(tr.evaluations > 0);
  }
  // The constant-noise strategy refits after every observation.
  REQUIRE(res.traces[1].refresh_count == 2);

  dg::BenchResult again = dg::run_benchmark(bs);
  REQUIRE(dg::trace_csv(res) == dg::trace_csv(again));
}

TEST_CASE("sparse RMSE strides still record the final iteration", "[testbed]") {
  dg::BenchSetup bs = mini_bench(9002);
  bs.strategies.pop_back();  // one strategy is enough here
  bs.rmse_stride = 10;       // larger than the budget
  dg::BenchResult res = dg::run_benchmark(bs);
  REQUIRE(res.traces.size() == 1);
  REQUIRE(res.traces[0].points.size() == 1);
  REQUIRE(res.traces[0].points[0].iteration == 2);
  REQUIRE(res.traces[0].final_rmse == res.traces[0].points[0].rmse);
}

TEST_CASE("run_benchmark rejects an empty strategy list", "[testbed]") {
  dg::BenchSetup bs = mini_bench(9003);
  bs.strategies.clear();
  REQUIRE_THROWS_AS(dg::run_benchmark(bs), dg::ConfigError);
}
