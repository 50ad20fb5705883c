// Config parsing, run-setup wiring, durable-session round trips, and the
// small file/formatting helpers they rely on.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "duogp/config.hpp"
#include "duogp/design.hpp"
#include "duogp/errors.hpp"
#include "duogp/io.hpp"
#include "duogp/session.hpp"
#include "duogp/strategies.hpp"

namespace dg = duogp;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json base_config() {
  return json{
      {"version", 1},
      {"name", "unit"},
      {"grid", {{"low", {-1.5}}, {"high", {0.0}}, {"stride", {0.25}}}},
      {"chain", {{"total_iterations", 400}, {"burn_in", 200}, {"thin", 50}}},
      {"design", {{"n1", 4}, {"n2", 2}, {"tau", 0.5}, {"budget", 3}}},
      {"simulator", {{"kind", "oned"}}},
  };
}

dg::RunConfig parse(const json& j) { return dg::parse_config(j.dump(), "inline"); }

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("duogp_unit_" + name);
}

void strip_times(json& j) {
  if (j.is_object()) {
    j.erase("seconds");
    j.erase("propose_seconds");
    for (auto& [k, v] : j.items()) strip_times(v);
  } else if (j.is_array()) {
    for (auto& v : j) strip_times(v);
  }
}

json digest(const dg::SessionState& s) {
  json j = dg::session_to_json(s);
  strip_times(j);
  return j;
}

// Smallest practical real session: 7-point grid, 6 seed observations, one
// short-but-adapted chain.
dg::SessionState tiny_session(std::uint64_t seed) {
  dg::RunConfig rc = parse(base_config());
  dg::RunSetup rs = rc.make_run_setup(dg::Strategy::LaSis, seed);
  rs.cfg.tau = 0.0;
  dg::DesignGrid grid = rc.make_grid();
  dg::Matrix X = dg::uniform_1d_design(grid, 6);
  dg::Vector y(6);
  dg::RngStream obs = dg::RngStream(seed).derive(dg::stream_role::kInitObserve);
  for (int i = 0; i < 6; ++i)
    y(i) = std::sin(2.0 * X(i, 0)) + 0.1 * obs.derive(static_cast<std::uint64_t>(i)).normal();
  return dg::session_init(rs, dg::ObservationSet::initial(X, y));
}

}  // namespace

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

TEST_CASE("a minimal config parses with documented defaults", "[config]") {
  dg::RunConfig rc = parse(base_config());
  REQUIRE(rc.name == "unit");
  REQUIRE(rc.kernel == dg::KernelFamily::SquaredExponential);
  REQUIRE(rc.jitter == dg::kDefaultJitter);
  REQUIRE(rc.make_grid().size() == 7);
  REQUIRE(rc.weight_values.empty());
  REQUIRE(rc.init.kind == dg::InitialDesignKind::Uniform1d);
  REQUIRE(rc.init.n0 == 0);
  REQUIRE(rc.chain.retained_draws() == 4);
  REQUIRE(rc.n1 == 4);
  REQUIRE(rc.n2 == 2);
  REQUIRE(rc.tau == 0.5);
  REQUIRE(rc.budget == 3);
  REQUIRE_FALSE(rc.analytic_noise);
  REQUIRE(rc.simulator.has_value());
  REQUIRE(*rc.simulator == "oned");
  REQUIRE(rc.strategies ==
          std::vector<dg::Strategy>{dg::Strategy::LaSis, dg::Strategy::LaEb,
                                    dg::Strategy::LaHomo});
  REQUIRE(rc.bench.macro_reps == 1);
  REQUIRE(rc.bench.rmse_stride == 10);
}

TEST_CASE("config validation rejects malformed documents", "[config]") {
  REQUIRE_THROWS_AS(dg::parse_config("{ not json", "inline"), dg::ConfigError);

  json j = base_config();
  j["version"] = 2;
  REQUIRE_THROWS_AS(parse(j), dg::ConfigError);

  j = base_config();
  j.erase("grid");
  REQUIRE_THROWS_AS(parse(j), dg::ConfigError);

  j = base_config();
  j["grid"]["high"] = {0.0, 1.0};  // ragged arrays
  REQUIRE_THROWS_AS(parse(j), dg::ConfigError);

  j = base_config();
  j["kernel"] = "cubic";
  REQUIRE_THROWS_AS(parse(j), dg::ConfigError);

  j = base_config();
  j["jitter"] = 0.0;
  REQUIRE_THROWS_AS(parse(j), dg::ConfigError);

  j = base_config();
  j["bogus_field"] = 1;
  REQUIRE_THROWS_WITH(parse(j), Catch::Matchers::ContainsSubstring("unknown field"));

  j = base_config();
  j["strategies"] = {"la_sis", "greedy"};
  REQUIRE_THROWS_AS(parse(j), dg::ConfigError);
}

TEST_CASE("chain and design cross-checks are enforced", "[config]") {
  json j = base_config();
  j["chain"]["total_iterations"] = 200;  // equals burn_in
  REQUIRE_THROWS_AS(parse(j), dg::ConfigError);

  j = base_config();
  j["chain"]["thin"] = 300;  // exceeds post-burn-in span
  REQUIRE_THROWS_AS(parse(j), dg::ConfigError);

  j = base_config();
  j["chain"]["target_accept"] = 1.0;
  REQUIRE_THROWS_AS(parse(j), dg::ConfigError);

  j = base_config();
  j["design"]["n1"] = 5;  // != retained draws (4)
  REQUIRE_THROWS_WITH(parse(j), Catch::Matchers::ContainsSubstring("retained draw"));

  j = base_config();
  j["design"]["tau"] = 1.5;
  REQUIRE_THROWS_AS(parse(j), dg::ConfigError);

  j = base_config();
  j["design"]["budget"] = 0;
  REQUIRE_THROWS_AS(parse(j), dg::ConfigError);

  j = base_config();
  j["design"]["n2"] = 0;
  REQUIRE_THROWS_AS(parse(j), dg::ConfigError);
}

TEST_CASE("grid-dependent constraints are enforced", "[config]") {
  // Uniform initial design requires one dimension.
  json j = base_config();
  j["grid"] = {{"low", {-1.0, -1.0}}, {"high", {1.0, 1.0}}, {"stride", {0.5, 0.5}}};
  j["simulator"] = {{"kind", "twod"}};
  j["initial_design"] = {{"kind", "uniform"}};
  REQUIRE_THROWS_AS(parse(j), dg::ConfigError);

  // The 1-d synthetic simulator requires a 1-d grid.
  j.erase("initial_design");
  j["simulator"] = {{"kind", "oned"}};
  REQUIRE_THROWS_AS(parse(j), dg::ConfigError);

  // Weight tables must span the grid exactly.
  j = base_config();
  j["weight_function"] = {{"kind", "table"}, {"values", {1.0, 2.0}}};
  REQUIRE_THROWS_WITH(parse(j), Catch::Matchers::ContainsSubstring("grid size"));

  j = base_config();
  json w = json::array();
  for (int t = 0; t < 7; ++t) w.push_back(1.0 + 0.1 * t);
  j["weight_function"] = {{"kind", "table"}, {"values", w}};
  dg::RunConfig rc = parse(j);
  REQUIRE(rc.make_weight_fn().values.size() == 7);
  REQUIRE(rc.make_weight_fn().values(6) == Catch::Approx(1.6));

  j["weight_function"]["values"][3] = -0.5;
  REQUIRE_THROWS_AS(parse(j), dg::ConfigError);
}

TEST_CASE("run and bench setups inherit every config field", "[config]") {
  json j = base_config();
  j["kernel"] = "matern32";
  j["priors"] = {{"mu0_mean", 0.25}, {"mu0_var", 2.0}};
  j["bench"] = {{"macro_reps", 3}, {"base_seed", 17}, {"rmse_stride", 5}};
  j["strategies"] = {"la_homo", "la_sis"};
  dg::RunConfig rc = parse(j);

  dg::RunSetup rs = rc.make_run_setup(dg::Strategy::LaEb, 99, 3);
  REQUIRE(rs.cfg.strategy == dg::Strategy::LaEb);
  REQUIRE(rs.cfg.workers == 3);
  REQUIRE(rs.seed == 99);
  REQUIRE(rs.kernel == dg::KernelFamily::Matern32);
  REQUIRE(rs.grid.size() == 7);
  REQUIRE(rs.cfg.n1 == 4);
  REQUIRE(rs.cfg.n2 == 2);
  REQUIRE(rs.cfg.tau == 0.5);
  REQUIRE(rs.cfg.budget == 3);
  REQUIRE(rs.cfg.chain.total_iterations == 400);
  REQUIRE(rs.priors.mu0_mean == 0.25);
  REQUIRE(rs.priors.mu0_var == 2.0);

  dg::BenchSetup bs = rc.make_bench_setup(2);
  REQUIRE(bs.strategies.size() == 2);
  REQUIRE(bs.strategies[0].strategy == dg::Strategy::LaHomo);
  REQUIRE(bs.strategies[1].strategy == dg::Strategy::LaSis);
  REQUIRE(bs.strategies[0].workers == 2);
  REQUIRE(bs.macro_reps == 3);
  REQUIRE(bs.base_seed == 17);
  REQUIRE(bs.rmse_stride == 5);

  // Without a simulator block, bench setups are refused but run setups work.
  json plain = base_config();
  plain.erase("simulator");
  dg::RunConfig rc2 = parse(plain);
  REQUIRE_FALSE(rc2.simulator.has_value());
  REQUIRE_NOTHROW(rc2.make_run_setup(dg::Strategy::LaSis, 1));
  REQUIRE_THROWS_AS(rc2.make_bench_setup(), dg::ConfigError);
}

TEST_CASE("load_config reads files and reports missing ones", "[config]") {
  fs::path p = temp_path("config.json");
  dg::write_file_atomic(p, base_config().dump(2) + "\n");
  dg::RunConfig rc = dg::load_config(p.string());
  REQUIRE(rc.name == "unit");
  fs::remove(p);
  REQUIRE_THROWS_AS(dg::load_config(p.string()), dg::ConfigError);
}

// ---------------------------------------------------------------------------
// File and formatting helpers
// ---------------------------------------------------------------------------

TEST_CASE("format_double round-trips exactly and prefers short forms", "[session]") {
  REQUIRE(dg::format_double(0.5) == "0.5");
  REQUIRE(dg::format_double(0.1) == "0.1");
  REQUIRE(dg::format_double(-2.0) == "-2");
  REQUIRE(dg::format_double(0.0) == "0");
  for (double x : {1.0 / 3.0, 6.02214076e23, -1.7976931348623157e308, 5e-324,
                   3.141592653589793, -0.1234567890123456789}) {
    // std::from_chars round-trips even subnormals, where stod reports ERANGE.
    std::string text = dg::format_double(x);
    double back = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), back);
    REQUIRE(ec == std::errc());
    REQUIRE(ptr == text.data() + text.size());
    REQUIRE(back == x);
  }
}

TEST_CASE("atomic writes round-trip content and replace existing files", "[session]") {
  fs::path p = temp_path("io_roundtrip.txt");
  std::string content = "line one\nline two\n\ttabbed\n";
  dg::write_file_atomic(p, content);
  REQUIRE(dg::read_file(p) == content);
  dg::write_file_atomic(p, "shorter\n");
  REQUIRE(dg::read_file(p) == "shorter\n");
  fs::remove(p);
  REQUIRE_THROWS(dg::read_file(p));
}

// ---------------------------------------------------------------------------
// Durable sessions
// ---------------------------------------------------------------------------

TEST_CASE("crc32 reproduces the classic check value", "[session]") {
  REQUIRE(dg::detail::crc32_hex("123456789") == "cbf43926");
  REQUIRE(dg::detail::crc32_hex("") == "00000000");
}

TEST_CASE("sessions survive a save/load round trip byte-for-byte", "[session]") {
  dg::SessionState s = tiny_session(314159);
  const dg::PendingProposal& p = dg::step_propose(s);
  double y = std::sin(2.0 * p.point(0));
  dg::step_observe(s, y);

  fs::path path = temp_path("session.json");
  dg::save_session(s, path.string());
  dg::SessionState loaded = dg::load_session(path.string());
  REQUIRE(digest(loaded) == digest(s));

  // Saving the loaded state reproduces the file exactly (timing fields aside,
  // the serialization is canonical).
  fs::path path2 = temp_path("session2.json");
  dg::save_session(loaded, path2.string());
  json a = json::parse(dg::read_file(path));
  json b = json::parse(dg::read_file(path2));
  strip_times(a);
  strip_times(b);
  REQUIRE(a == b);
  fs::remove(path);
  fs::remove(path2);
}

TEST_CASE("a pending proposal survives the round trip and continues identically",
          "[session]") {
  dg::SessionState live = tiny_session(271828);
  dg::step_propose(live);
  REQUIRE(live.pending.has_value());

  fs::path path = temp_path("session_pending.json");
  dg::save_session(live, path.string());
  dg::SessionState resumed = dg::load_session(path.string());
  fs::remove(path);
  REQUIRE(resumed.pending.has_value());
  REQUIRE(resumed.pending->candidate_index == live.pending->candidate_index);
  REQUIRE(resumed.pending->y_hat == live.pending->y_hat);
  REQUIRE(resumed.pending->augment_draws == live.pending->augment_draws);

  double y = -0.25;
  dg::step_observe(live, y);
  dg::step_observe(resumed, y);
  REQUIRE(digest(resumed) == digest(live));

  // Both continuations propose the same next point.
  const dg::PendingProposal& pa = dg::step_propose(live);
  const dg::PendingProposal& pb = dg::step_propose(resumed);
  REQUIRE(pa.candidate_index == pb.candidate_index);
  REQUIRE(pa.criterion == pb.criterion);
}

TEST_CASE("corrupt or foreign session files are refused", "[session]") {
  dg::SessionState s = tiny_session(161803);
  fs::path path = temp_path("session_corrupt.json");
  dg::save_session(s, path.string());

  // Schema version from the future.
  json file = json::parse(dg::read_file(path));
  json newer = file;
  newer["schema_version"] = 99;
  dg::write_file_atomic(path, newer.dump(1) + "\n");
  REQUIRE_THROWS_AS(dg::load_session(path.string()), dg::SessionError);

  // Body edited without updating the checksum.
  json tampered = file;
  tampered["body"]["iteration"] = 7;
  dg::write_file_atomic(path, tampered.dump(1) + "\n");
  REQUIRE_THROWS_WITH(dg::load_session(path.string()),
                      Catch::Matchers::ContainsSubstring("checksum"));

  // Not JSON at all, then missing entirely.
  dg::write_file_atomic(path, "not a session\n");
  REQUIRE_THROWS_AS(dg::load_session(path.string()), dg::SessionError);
  fs::remove(path);
  REQUIRE_THROWS_AS(dg::load_session(path.string()), dg::SessionError);
}
