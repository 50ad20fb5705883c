// duogp: sequential design for stochastic simulators with input-dependent
// noise.  Subcommands drive a run either end-to-end against the bundled
// synthetic simulators (bench) or step-by-step against an external simulator
// through a durable session file (init / propose / observe / status / report).
//
// Machine-readable results go to stdout as single-line JSON objects; progress
// and diagnostics go to stderr.  Exit codes: 0 success, 1 runtime failure
// (including unreadable or corrupt sessions), 2 configuration or usage error,
// 3 protocol error (out-of-order propose/observe, exhausted budget).

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "duogp/config.hpp"
#include "duogp/session.hpp"
#include "duogp/testbed.hpp"

namespace {

using nlohmann::json;
namespace dg = duogp;

void emit(const json& j) { std::cout << j.dump() << "\n" << std::flush; }

void note(const std::string& s) { std::cerr << s << "\n"; }

json point_json(const dg::DesignPoint& x) {
  json a = json::array();
  for (int h = 0; h < x.size(); ++h) a.push_back(x(h));
  return a;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// CSV helpers (strict numeric CSV, no quoting)
// ---------------------------------------------------------------------------

std::string design_header(int d) {
  std::string h;
  for (int i = 1; i <= d; ++i) {
    if (!h.empty()) h += ',';
    h += "x" + std::to_string(i);
  }
  return h;
}

std::string design_csv(const dg::Matrix& pts) {
  std::string out = design_header(static_cast<int>(pts.cols())) + "\n";
  for (int i = 0; i < pts.rows(); ++i) {
    for (int j = 0; j < pts.cols(); ++j) {
      if (j) out += ',';
      out += dg::format_double(pts(i, j));
    }
    out += '\n';
  }
  return out;
}

std::string observations_csv(const dg::Matrix& pts, const dg::Vector& y) {
  std::string out = design_header(static_cast<int>(pts.cols())) + ",y\n";
  for (int i = 0; i < pts.rows(); ++i) {
    for (int j = 0; j < pts.cols(); ++j) {
      out += dg::format_double(pts(i, j));
      out += ',';
    }
    out += dg::format_double(y(i));
    out += '\n';
  }
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

// Reads `x1,...,xd,y` rows.  The header must match the session dimension.
void read_observations_csv(const std::string& path, int d, dg::Matrix& pts, dg::Vector& y) {
  std::istringstream in(dg::read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw dg::ConfigError(path + ": empty observations file");
  std::string want = design_header(d) + ",y";
  {
    std::string got;
    for (char c : line)
      if (c != '\r') got += c;
    if (got != want)
      throw dg::ConfigError(path + ": header '" + got + "' (expected '" + want + "')");
  }
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> f = split_csv_line(line);
    if (static_cast<int>(f.size()) != d + 1)
      throw dg::ConfigError(path + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(d + 1) + " fields, got " + std::to_string(f.size()));
    std::vector<double> row(d + 1);
    for (int j = 0; j <= d; ++j) {
      try {
        std::size_t used = 0;
        row[j] = std::stod(f[j], &used);
        if (used != f[j].size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw dg::ConfigError(path + ":" + std::to_string(lineno) + ": bad number '" + f[j] +
                              "'");
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw dg::ConfigError(path + ": no observation rows");
  pts.resize(static_cast<int>(rows.size()), d);
  y.resize(static_cast<int>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int j = 0; j < d; ++j) pts(static_cast<int>(i), j) = rows[i][j];
    y(static_cast<int>(i)) = rows[i][d];
  }
}

std::string surface_csv(const dg::DesignGrid& grid, const dg::PredictionSurfaces& s) {
  std::string out = design_header(grid.dim()) + ",pred_mean,pred_var_latent,fitted_log_noise\n";
  for (int t = 0; t < grid.size(); ++t) {
    for (int h = 0; h < grid.dim(); ++h) {
      out += dg::format_double(grid.points()(t, h));
      out += ',';
    }
    out += dg::format_double(s.mean(t));
    out += ',';
    out += dg::format_double(s.var_latent(t));
    out += ',';
    out += dg::format_double(s.log_noise(t));
    out += '\n';
  }
  return out;
}

std::string records_csv(const dg::SessionState& s) {
  const int d = s.setup.grid.dim();
  std::string out = "iteration,candidate_index," + design_header(d) +
                    ",y,y_hat,criterion,ess,refreshed,seconds\n";
  for (const dg::IterationRecord& r : s.records) {
    out += std::to_string(r.iteration);
    out += ',';
    out += std::to_string(r.candidate_index);
    for (int h = 0; h < d; ++h) {
      out += ',';
      out += dg::format_double(r.point(h));
    }
    out += ',';
    out += dg::format_double(r.y);
    out += ',';
    out += dg::format_double(r.y_hat);
    out += ',';
    out += dg::format_double(r.criterion);
    out += ',';
    out += dg::format_double(r.ess);
    out += ',';
    out += r.refreshed ? "1" : "0";
    out += ',';
    out += dg::format_double(r.seconds);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcommand state
// ---------------------------------------------------------------------------

struct Options {
  // shared
  std::string config_path;
  std::string session_path;
  int workers = 1;
  // init
  std::string strategy = "la_sis";
  std::uint64_t seed = 1;
  int n0_override = 0;
  std::string observations_path;
  std::string emit_design_path;
  std::string observations_out;
  std::string label;
  // observe
  double y = 0.0;
  // report
  std::string surface_out;
  std::string records_out;
  // bench
  std::string out_dir;
  int reps_override = 0;
  int budget_override = 0;
  std::uint64_t seed_override = 0;
  bool seed_set = false;
  std::string strategies_override;
  int rmse_stride_override = 0;
};

dg::Strategy parse_strategy(const std::string& s) {
  if (s == "la_sis") return dg::Strategy::LaSis;
  if (s == "la_eb") return dg::Strategy::LaEb;
  if (s == "la_homo") return dg::Strategy::LaHomo;
  throw dg::ConfigError("unknown strategy '" + s + "' (expected la_sis, la_eb, or la_homo)");
}

// ---------------------------------------------------------------------------
// init
// ---------------------------------------------------------------------------

int cmd_init(const Options& opt) {
  dg::RunConfig cfg = dg::load_config(opt.config_path);
  dg::DesignGrid grid = cfg.make_grid();
  const int d = grid.dim();
  const int n0 = opt.n0_override > 0   ? opt.n0_override
                 : cfg.init.n0 > 0     ? cfg.init.n0
                                       : dg::default_initial_size(d);

  dg::RngStream root(opt.seed);
  dg::Matrix X0;
  dg::Vector y0;
  if (!opt.observations_path.empty()) {
    read_observations_csv(opt.observations_path, d, X0, y0);
  } else {
    if (cfg.init.kind == dg::InitialDesignKind::Uniform1d)
      X0 = dg::uniform_1d_design(grid, n0);
    else
      X0 = dg::lhd_maximin(grid, n0, root.derive(dg::stream_role::kInitDesign),
                           cfg.init.restarts);
    if (!opt.emit_design_path.empty()) {
      dg::write_file_atomic(opt.emit_design_path, design_csv(X0));
      emit({{"event", "design"},
            {"path", opt.emit_design_path},
            {"n0", static_cast<int>(X0.rows())}});
      note("wrote initial design; evaluate it and re-run init with --observations");
      return 0;
    }
    if (!cfg.simulator)
      throw dg::ConfigError(
          "config has no synthetic simulator; pass --observations with measured responses "
          "or --emit-design to export the initial design");
    dg::SyntheticSimulator sim =
        *cfg.simulator == "oned" ? dg::oned_simulator() : dg::twod_simulator();
    y0.resize(X0.rows());
    dg::RngStream obs = root.derive(dg::stream_role::kInitObserve);
    for (int i = 0; i < X0.rows(); ++i) {
      dg::RngStream si = obs.derive(static_cast<std::uint64_t>(i));
      y0(i) = dg::simulate(sim, X0.row(i).transpose(), si);
    }
  }

  if (!opt.observations_out.empty())
    dg::write_file_atomic(opt.observations_out, observations_csv(X0, y0));

  dg::RunSetup rs = cfg.make_run_setup(parse_strategy(opt.strategy), opt.seed, opt.workers);
  rs.cfg.label = opt.label;
  note("fitting initial posterior (" + std::to_string(X0.rows()) + " observations) ...");
  dg::SessionState s = dg::session_init(rs, dg::ObservationSet::initial(X0, y0));
  dg::save_session(s, opt.session_path);
  emit({{"event", "initialized"},
        {"session", opt.session_path},
        {"strategy", dg::strategy_name(s.setup.cfg.strategy)},
        {"n0", s.data.n0},
        {"budget", s.setup.cfg.budget},
        {"iteration", s.iteration}});
  return 0;
}

// ---------------------------------------------------------------------------
// propose / observe / status / report
// ---------------------------------------------------------------------------

int cmd_propose(const Options& opt) {
  dg::SessionState s = dg::load_session(opt.session_path);
  if (opt.workers > 0) s.setup.cfg.workers = opt.workers;
  const dg::PendingProposal& p = dg::step_propose(s);
  dg::save_session(s, opt.session_path);
  emit({{"event", "proposal"},
        {"iteration", s.iteration + 1},
        {"candidate_index", p.candidate_index},
        {"point", point_json(p.point)},
        {"y_hat", p.y_hat},
        {"criterion", p.criterion},
        {"seconds", p.propose_seconds}});
  return 0;
}

int cmd_observe(const Options& opt) {
  dg::SessionState s = dg::load_session(opt.session_path);
  dg::step_observe(s, opt.y);
  dg::save_session(s, opt.session_path);
  const dg::IterationRecord& r = s.records.back();
  emit({{"event", "observed"},
        {"iteration", r.iteration},
        {"ess", r.ess},
        {"refreshed", r.refreshed},
        {"remaining", s.setup.cfg.budget - s.iteration}});
  return 0;
}

int cmd_status(const Options& opt) {
  dg::SessionState s = dg::load_session(opt.session_path);
  json j{{"event", "status"},
         {"session", opt.session_path},
         {"strategy", dg::strategy_name(s.setup.cfg.strategy)},
         {"iteration", s.iteration},
         {"budget", s.setup.cfg.budget},
         {"observations", s.data.size()},
         {"n0", s.data.n0},
         {"refresh_count", s.refresh_count},
         {"clamped", s.clamped},
         {"evaluations", s.evaluations}};
  if (s.pending)
    j["pending"] = {{"candidate_index", s.pending->candidate_index},
                    {"point", point_json(s.pending->point)},
                    {"y_hat", s.pending->y_hat},
                    {"criterion", s.pending->criterion}};
  else
    j["pending"] = nullptr;
  emit(j);
  return 0;
}

int cmd_report(const Options& opt) {
  dg::SessionState s = dg::load_session(opt.session_path);
  if (!opt.records_out.empty()) dg::write_file_atomic(opt.records_out, records_csv(s));
  json j{{"event", "report"}, {"session", opt.session_path}, {"iteration", s.iteration}};
  if (!opt.surface_out.empty()) {
    note("predicting over " + std::to_string(s.setup.grid.size()) + " grid points ...");
    dg::PredictionSurfaces surf = dg::predict_surfaces(s);
    dg::write_file_atomic(opt.surface_out, surface_csv(s.setup.grid, surf));
    j["surface"] = opt.surface_out;
    j["grid_points"] = s.setup.grid.size();
  }
  if (!opt.records_out.empty()) j["records"] = opt.records_out;
  emit(j);
  return 0;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

json summarize_bench(const dg::RunConfig& cfg, const dg::BenchSetup& setup,
                     const dg::BenchResult& result) {
  json strategies = json::object();
  for (const dg::StrategyConfig& sc : setup.strategies) {
    const std::string label = sc.effective_label();
    std::vector<double> finals;
    std::map<int, std::vector<double>> by_iter;
    double refreshes = 0.0;
    long clamped = 0, evals = 0;
    double seconds = 0.0;
    int runs = 0;
    for (const dg::RunTrace& tr : result.traces) {
      if (tr.label != label) continue;
      ++runs;
      finals.push_back(tr.final_rmse);
      for (const dg::TracePoint& p : tr.points) by_iter[p.iteration].push_back(p.rmse);
      refreshes += tr.refresh_count;
      clamped += tr.clamped;
      evals += tr.evaluations;
      seconds += tr.seconds;
    }
    if (runs == 0) continue;
    json curve = json::array();
    for (auto& [it, v] : by_iter)
      curve.push_back({{"iteration", it}, {"median_rmse", median_of(v)}});
    strategies[label] = {
        {"runs", runs},
        {"final_rmse_median", median_of(finals)},
        {"final_rmse_min", *std::min_element(finals.begin(), finals.end())},
        {"final_rmse_max", *std::max_element(finals.begin(), finals.end())},
        {"rmse_by_iteration", std::move(curve)},
        {"mean_refresh_count", refreshes / runs},
        {"clamp_fraction", evals > 0 ? static_cast<double>(clamped) / evals : 0.0},
        {"seconds_total", seconds}};
  }
  return {{"config", cfg.name},
          {"macro_reps", setup.macro_reps},
          {"budget", setup.strategies.empty() ? 0 : setup.strategies.front().budget},
          {"base_seed", setup.base_seed},
          {"strategies", std::move(strategies)}};
}

int cmd_bench(const Options& opt) {
  dg::RunConfig cfg = dg::load_config(opt.config_path);
  if (opt.budget_override > 0) cfg.budget = opt.budget_override;
  if (opt.reps_override > 0) cfg.bench.macro_reps = opt.reps_override;
  if (opt.seed_set) cfg.bench.base_seed = opt.seed_override;
  if (opt.rmse_stride_override > 0) cfg.bench.rmse_stride = opt.rmse_stride_override;
  if (!opt.strategies_override.empty()) {
    cfg.strategies.clear();
    std::istringstream ss(opt.strategies_override);
    std::string tok;
    while (std::getline(ss, tok, ',')) cfg.strategies.push_back(parse_strategy(tok));
  }
  dg::BenchSetup setup = cfg.make_bench_setup(opt.workers);

  std::filesystem::create_directories(opt.out_dir);
  std::ofstream run_log(std::filesystem::path(opt.out_dir) / "run_log.jsonl",
                        std::ios::trunc);
  if (!run_log) throw std::runtime_error("cannot open run log in " + opt.out_dir);

  int total_runs = setup.macro_reps * static_cast<int>(setup.strategies.size());
  note("bench: " + std::to_string(setup.macro_reps) + " repetition(s) x " +
       std::to_string(setup.strategies.size()) + " strategy(ies), budget " +
       std::to_string(cfg.budget) + ", grid " + std::to_string(setup.grid.size()));

  int done = 0;
  std::string last_label;
  int last_rep = -1;
  dg::BenchResult result = dg::run_benchmark(
      setup, [&](const std::string& label, int rep, const dg::IterationRecord& rec,
                 const dg::CriterionReport& report) {
        if (label != last_label || rep != last_rep) {
          if (last_rep >= 0) ++done;
          note("run " + std::to_string(done + 1) + "/" + std::to_string(total_runs) + ": " +
               label + " rep " + std::to_string(rep));
          last_label = label;
          last_rep = rep;
        }
        json line{{"strategy", label},
                  {"macro_rep", rep},
                  {"iteration", rec.iteration},
                  {"candidate_index", rec.candidate_index},
                  {"point", point_json(rec.point)},
                  {"y", rec.y},
                  {"y_hat", rec.y_hat},
                  {"criterion", rec.criterion},
                  {"ess", rec.ess},
                  {"refreshed", rec.refreshed},
                  {"seconds", rec.seconds},
                  {"clamped", report.clamped},
                  {"evaluations", report.evaluations}};
        run_log << line.dump() << "\n";
        run_log.flush();
      });

  dg::write_file_atomic(std::filesystem::path(opt.out_dir) / "trace.csv",
                        dg::trace_csv(result));
  json summary = summarize_bench(cfg, setup, result);
  dg::write_file_atomic(std::filesystem::path(opt.out_dir) / "summary.json",
                        summary.dump(1) + "\n");

  for (const dg::RunTrace& tr : result.traces)
    emit({{"event", "trace"},
          {"strategy", tr.label},
          {"macro_rep", tr.macro_rep},
          {"final_rmse", tr.final_rmse},
          {"refresh_count", tr.refresh_count},
          {"seconds", tr.seconds}});
  emit({{"event", "bench_complete"},
        {"out", opt.out_dir},
        {"runs", static_cast<int>(result.traces.size())}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Sequential design for stochastic simulators with input-dependent noise: "
      "dual Gaussian-process surrogates, lookahead acquisition, durable sessions."};
  app.require_subcommand(1);
  Options opt;

  CLI::App* bench = app.add_subcommand(
      "bench", "Run the synthetic benchmark protocol from a config file");
  bench->add_option("--config", opt.config_path, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  bench->add_option("--out", opt.out_dir, "output directory (trace.csv, summary.json, run_log.jsonl)")
      ->required();
  bench->add_option("--reps", opt.reps_override, "override macro repetitions");
  bench->add_option("--budget", opt.budget_override, "override sequential budget");
  auto* seed_opt = bench->add_option("--seed", opt.seed_override, "override base seed");
  bench->add_option("--strategies", opt.strategies_override,
                    "comma-separated subset: la_sis,la_eb,la_homo");
  bench->add_option("--rmse-stride", opt.rmse_stride_override,
                    "record the error curve every this many iterations");
  bench->add_option("--workers", opt.workers, "worker threads for the candidate sweep");

  CLI::App* init = app.add_subcommand(
      "init", "Create a session: initial design, observations, first posterior fit");
  init->add_option("--config", opt.config_path, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  init->add_option("--session", opt.session_path, "session file to create")->required();
  init->add_option("--strategy", opt.strategy, "la_sis | la_eb | la_homo");
  init->add_option("--seed", opt.seed, "session seed (drives all randomness)");
  init->add_option("--n0", opt.n0_override, "override initial design size");
  init->add_option("--observations", opt.observations_path,
                   "initial observations CSV (header x1,...,xd,y)")
      ->check(CLI::ExistingFile);
  init->add_option("--emit-design", opt.emit_design_path,
                   "write the initial design CSV and stop (for external evaluation)");
  init->add_option("--observations-out", opt.observations_out,
                   "also write the initial observations used (CSV)");
  init->add_option("--label", opt.label, "trace label for this run");
  init->add_option("--workers", opt.workers, "worker threads for the candidate sweep");

  CLI::App* propose = app.add_subcommand("propose", "Choose the next design point");
  propose->add_option("--session", opt.session_path, "session file")
      ->required()
      ->check(CLI::ExistingFile);
  propose->add_option("--workers", opt.workers, "worker threads for the candidate sweep");

  CLI::App* observe =
      app.add_subcommand("observe", "Feed back the simulator response for the pending proposal");
  observe->add_option("--session", opt.session_path, "session file")
      ->required()
      ->check(CLI::ExistingFile);
  observe->add_option("--y", opt.y, "observed response")->required();

  CLI::App* status = app.add_subcommand("status", "Show session progress");
  status->add_option("--session", opt.session_path, "session file")
      ->required()
      ->check(CLI::ExistingFile);

  CLI::App* report = app.add_subcommand("report", "Export prediction surfaces and run records");
  report->add_option("--session", opt.session_path, "session file")
      ->required()
      ->check(CLI::ExistingFile);
  report->add_option("--surface", opt.surface_out,
                     "write grid predictions CSV (x1,...,xd,pred_mean,pred_var_latent,"
                     "fitted_log_noise)");
  report->add_option("--records", opt.records_out, "write per-iteration records CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  opt.seed_set = seed_opt->count() > 0;

  try {
    if (bench->parsed()) return cmd_bench(opt);
    if (init->parsed()) return cmd_init(opt);
    if (propose->parsed()) return cmd_propose(opt);
    if (observe->parsed()) return cmd_observe(opt);
    if (status->parsed()) return cmd_status(opt);
    return cmd_report(opt);
  } catch (const dg::ProtocolViolation& e) {
    note(std::string("protocol error: ") + e.what());
    return 3;
  } catch (const dg::OutOfBudget& e) {
    note(std::string("protocol error: ") + e.what());
    return 3;
  } catch (const dg::ConfigError& e) {
    note(std::string("config error: ") + e.what());
    return 2;
  } catch (const dg::DimensionError& e) {
    note(std::string("config error: ") + e.what());
    return 2;
  } catch (const std::exception& e) {
    note(std::string("error: ") + e.what());
    return 1;
  }
}
