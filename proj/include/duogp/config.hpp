#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "duogp/errors.hpp"
#include "duogp/testbed.hpp"

namespace duogp {

// ---------------------------------------------------------------------------
// Experiment configuration files (versioned JSON)
// ---------------------------------------------------------------------------

inline constexpr int kConfigVersion = 1;

struct InitialDesignConfig {
  InitialDesignKind kind = InitialDesignKind::Uniform1d;
  int n0 = 0;  // 0 -> 10 * d convention
  int restarts = 1000;
};

struct BenchConfig {
  int macro_reps = 1;
  std::uint64_t base_seed = 1;
  int rmse_stride = 10;
};

struct RunConfig {
  std::string name;
  std::vector<double> low, high, stride;
  KernelFamily kernel = KernelFamily::SquaredExponential;
  double jitter = kDefaultJitter;
  PriorSpec priors;
  std::vector<double> weight_values;  // empty -> uniform weight 1 at every grid point
  InitialDesignConfig init;
  ChainSchedule chain;
  int n1 = 30;
  int n2 = 10;
  double tau = 0.8;
  int budget = 100;
  bool analytic_noise = false;
  std::optional<std::string> simulator;  // "oned" | "twod"; absent for external simulators
  std::vector<Strategy> strategies{Strategy::LaSis, Strategy::LaEb, Strategy::LaHomo};
  BenchConfig bench;

  DesignGrid make_grid() const {
    Vector lo = Eigen::Map<const Vector>(low.data(), static_cast<Eigen::Index>(low.size()));
    Vector hi = Eigen::Map<const Vector>(high.data(), static_cast<Eigen::Index>(high.size()));
    Vector st = Eigen::Map<const Vector>(stride.data(), static_cast<Eigen::Index>(stride.size()));
    return duogp::make_grid(lo, hi, st);
  }

  WeightFunction make_weight_fn() const {
    WeightFunction wf;
    if (!weight_values.empty())
      wf.values =
          Eigen::Map<const Vector>(weight_values.data(),
                                   static_cast<Eigen::Index>(weight_values.size()));
    return wf;
  }

  StrategyConfig make_strategy_config(Strategy s) const {
    StrategyConfig cfg;
    cfg.strategy = s;
    cfg.tau = tau;
    cfg.n1 = n1;
    cfg.n2 = n2;
    cfg.budget = budget;
    cfg.chain = chain;
    cfg.analytic_noise = analytic_noise;
    return cfg;
  }

  RunSetup make_run_setup(Strategy s, std::uint64_t seed, int workers = 1) const {
    RunSetup rs;
    rs.grid = make_grid();
    rs.priors = priors;
    rs.kernel = kernel;
    rs.jitter = jitter;
    rs.weight_fn = make_weight_fn();
    rs.cfg = make_strategy_config(s);
    rs.cfg.workers = workers;
    rs.seed = seed;
    if (rs.weight_fn.values.size() != 0 && rs.weight_fn.values.size() != rs.grid.size())
      throw ConfigError("weight_function.values length " +
                        std::to_string(rs.weight_fn.values.size()) +
                        " does not match grid size " + std::to_string(rs.grid.size()));
    return rs;
  }

  BenchSetup make_bench_setup(int workers = 1) const {
    if (!simulator)
      throw ConfigError("config '" + name +
                        "' has no synthetic simulator; bench requires simulator.kind");
    BenchSetup bs;
    bs.grid = make_grid();
    bs.priors = priors;
    bs.kernel = kernel;
    bs.jitter = jitter;
    bs.weight_fn = make_weight_fn();
    if (bs.weight_fn.values.size() != 0 && bs.weight_fn.values.size() != bs.grid.size())
      throw ConfigError("weight_function.values length does not match grid size");
    bs.sim = *simulator == "oned" ? oned_simulator() : twod_simulator();
    bs.init_kind = init.kind;
    bs.n0 = init.n0;
    bs.lhd_restarts = init.restarts;
    for (Strategy s : strategies) {
      StrategyConfig cfg = make_strategy_config(s);
      cfg.workers = workers;
      bs.strategies.push_back(cfg);
    }
    bs.macro_reps = bench.macro_reps;
    bs.base_seed = bench.base_seed;
    bs.rmse_stride = bench.rmse_stride;
    return bs;
  }
};

namespace detail {

// Converts a byte offset from the JSON parser into 1-based line:column.
inline std::pair<int, int> line_col(const std::string& text, std::size_t byte) {
  int line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& root, std::string file) : file_(std::move(file)) {
    stack_.push_back({&root, ""});
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError(file_ + ": field '" + path() + "': " + what);
  }

  std::string path() const {
    std::string p;
    for (const Frame& f : stack_)
      if (!f.key.empty()) {
        if (!p.empty()) p += '.';
        p += f.key;
      }
    return p.empty() ? "(root)" : p;
  }

  const nlohmann::json& node() const { return *stack_.back().node; }

  bool has(const std::string& key) const {
    return node().is_object() && node().contains(key);
  }

  // Marks `key` as recognized and descends into it for the duration of `fn`.
  template <typename Fn>
  void enter(const std::string& key, Fn&& fn) {
    stack_.back().seen.insert(key);
    if (!has(key)) return;
    stack_.push_back({&node().at(key), key});
    fn();
    finish_object();
    stack_.pop_back();
  }

  template <typename T>
  void read(const std::string& key, T& out, const char* type_name) {
    stack_.back().seen.insert(key);
    if (!has(key)) return;
    const nlohmann::json& v = node().at(key);
    stack_.push_back({&v, key});
    try {
      out = v.get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(std::string("expected ") + type_name);
    }
    stack_.pop_back();
  }

  template <typename T>
  void require(const std::string& key, T& out, const char* type_name) {
    if (!has(key)) {
      stack_.push_back({&node(), key});
      fail("missing required field");
    }
    read(key, out, type_name);
  }

  // Rejects keys in the current object that nothing consumed.
  void finish_object() {
    if (!node().is_object()) return;
    for (auto it = node().begin(); it != node().end(); ++it)
      if (!stack_.back().seen.count(it.key())) {
        stack_.push_back({&it.value(), it.key()});
        fail("unknown field");
      }
  }

 private:
  struct Frame {
    const nlohmann::json* node;
    std::string key;
    std::set<std::string> seen;
  };
  std::string file_;
  std::vector<Frame> stack_;
};

inline GammaPrior read_gamma(ConfigReader& r) {
  GammaPrior g{2.0, 1.0};
  r.require("shape", g.shape, "number");
  r.require("rate", g.rate, "number");
  if (!(g.shape > 0.0) || !(g.rate > 0.0)) r.fail("shape and rate must be positive");
  return g;
}

}  // namespace detail

// Parses a configuration document.  `file` is used only for diagnostics.
// Parse errors report line:column; schema errors report the offending field
// path.  Unknown fields anywhere in the document are rejected.
inline RunConfig parse_config(const std::string& text, const std::string& file) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    auto [line, col] = detail::line_col(text, e.byte > 0 ? e.byte - 1 : 0);
    throw ConfigError(file + ":" + std::to_string(line) + ":" + std::to_string(col) +
                      ": " + e.what());
  }
  if (!root.is_object()) throw ConfigError(file + ": top level must be an object");

  detail::ConfigReader r(root, file);
  RunConfig cfg;

  int version = 0;
  r.require("version", version, "integer");
  if (version != kConfigVersion)
    throw ConfigError(file + ": unsupported config version " + std::to_string(version) +
                      " (expected " + std::to_string(kConfigVersion) + ")");

  r.read("name", cfg.name, "string");

  bool saw_grid = false;
  r.enter("grid", [&] {
    saw_grid = true;
    r.require("low", cfg.low, "array of numbers");
    r.require("high", cfg.high, "array of numbers");
    r.require("stride", cfg.stride, "array of numbers");
    if (cfg.low.empty() || cfg.low.size() != cfg.high.size() ||
        cfg.low.size() != cfg.stride.size())
      r.fail("low, high, and stride must be nonempty arrays of equal length");
  });
  if (!saw_grid) throw ConfigError(file + ": field 'grid': missing required field");
  const std::size_t d = cfg.low.size();

  std::string kernel_name = "squared_exponential";
  r.read("kernel", kernel_name, "string");
  if (kernel_name == "squared_exponential")
    cfg.kernel = KernelFamily::SquaredExponential;
  else if (kernel_name == "matern32")
    cfg.kernel = KernelFamily::Matern32;
  else
    throw ConfigError(file + ": field 'kernel': expected 'squared_exponential' or 'matern32'");

  r.read("jitter", cfg.jitter, "number");
  if (!(cfg.jitter > 0.0)) throw ConfigError(file + ": field 'jitter': must be positive");

  // Default lengthscale priors follow the grid-spacing convention; an explicit
  // priors block overrides any subset of them.
  cfg.priors = default_priors(Eigen::Map<const Vector>(cfg.stride.data(),
                                                       static_cast<Eigen::Index>(d)));
  r.enter("priors", [&] {
    r.read("mu0_mean", cfg.priors.mu0_mean, "number");
    r.read("mu0_var", cfg.priors.mu0_var, "number");
    if (!(cfg.priors.mu0_var > 0.0)) r.fail("mu0_var must be positive");
    r.enter("sigma_f2", [&] {
      GammaPrior g = detail::read_gamma(r);
      cfg.priors.alpha_f = g.shape;
      cfg.priors.beta_f = g.rate;
    });
    r.enter("sigma_v2", [&] {
      GammaPrior g = detail::read_gamma(r);
      cfg.priors.alpha_v = g.shape;
      cfg.priors.beta_v = g.rate;
    });
    auto read_ls = [&](const std::string& key, std::vector<GammaPrior>& out) {
      r.enter(key, [&] {
        if (!r.node().is_array() || r.node().size() != d)
          r.fail("expected an array with one {shape, rate} entry per dimension");
        std::vector<GammaPrior> parsed;
        for (const auto& item : r.node()) {
          detail::ConfigReader sub(item, file);
          GammaPrior g{2.0, 1.0};
          sub.require("shape", g.shape, "number");
          sub.require("rate", g.rate, "number");
          sub.finish_object();
          if (!(g.shape > 0.0) || !(g.rate > 0.0)) r.fail("shape and rate must be positive");
          parsed.push_back(g);
        }
        out = parsed;
      });
    };
    read_ls("lengthscale_f", cfg.priors.lf);
    read_ls("lengthscale_v", cfg.priors.lv);
  });

  r.enter("weight_function", [&] {
    std::string kind = "uniform";
    r.require("kind", kind, "string");
    if (kind == "uniform") {
      // empty table means weight 1 everywhere
    } else if (kind == "table") {
      r.require("values", cfg.weight_values, "array of numbers");
      if (cfg.weight_values.empty()) r.fail("values must be nonempty");
      for (double w : cfg.weight_values)
        if (!(w >= 0.0)) r.fail("weights must be nonnegative");
    } else {
      r.fail("expected kind 'uniform' or 'table'");
    }
  });

  r.enter("initial_design", [&] {
    std::string kind = d == 1 ? "uniform" : "lhd_maximin";
    r.read("kind", kind, "string");
    if (kind == "uniform")
      cfg.init.kind = InitialDesignKind::Uniform1d;
    else if (kind == "lhd_maximin")
      cfg.init.kind = InitialDesignKind::LhdMaximin;
    else
      r.fail("expected kind 'uniform' or 'lhd_maximin'");
    r.read("n0", cfg.init.n0, "integer");
    if (cfg.init.n0 < 0) r.fail("n0 must be nonnegative");
    r.read("restarts", cfg.init.restarts, "integer");
    if (cfg.init.restarts < 1) r.fail("restarts must be at least 1");
  });
  if (d > 1 && cfg.init.kind == InitialDesignKind::Uniform1d)
    throw ConfigError(file +
                      ": field 'initial_design.kind': 'uniform' requires a 1-d grid");

  r.enter("chain", [&] {
    r.read("total_iterations", cfg.chain.total_iterations, "integer");
    r.read("burn_in", cfg.chain.burn_in, "integer");
    r.read("thin", cfg.chain.thin, "integer");
    r.read("target_accept", cfg.chain.target_accept, "number");
    r.read("max_tree_depth", cfg.chain.max_tree_depth, "integer");
    if (cfg.chain.burn_in < 1 || cfg.chain.thin < 1)
      r.fail("burn_in and thin must be positive");
    if (cfg.chain.total_iterations <= cfg.chain.burn_in)
      r.fail("total_iterations must exceed burn_in");
    if (cfg.chain.thin > cfg.chain.total_iterations - cfg.chain.burn_in)
      r.fail("thin cannot exceed the number of post-burn-in iterations");
    if (!(cfg.chain.target_accept > 0.0) || !(cfg.chain.target_accept < 1.0))
      r.fail("target_accept must be in (0, 1)");
    if (cfg.chain.max_tree_depth < 1) r.fail("max_tree_depth must be positive");
  });

  r.enter("design", [&] {
    r.read("n1", cfg.n1, "integer");
    r.read("n2", cfg.n2, "integer");
    r.read("tau", cfg.tau, "number");
    r.read("budget", cfg.budget, "integer");
    r.read("analytic_noise", cfg.analytic_noise, "boolean");
    if (cfg.n1 < 1 || cfg.n2 < 1) r.fail("n1 and n2 must be positive");
    if (cfg.n1 != cfg.chain.retained_draws())
      r.fail("n1 must equal the chain's retained draw count ((total_iterations - burn_in) / "
             "thin = " +
             std::to_string(cfg.chain.retained_draws()) + ")");
    if (!(cfg.tau >= 0.0) || !(cfg.tau <= 1.0)) r.fail("tau must be in [0, 1]");
    if (cfg.budget < 1) r.fail("budget must be positive");
  });

  r.enter("simulator", [&] {
    std::string kind;
    r.require("kind", kind, "string");
    if (kind != "oned" && kind != "twod") r.fail("expected kind 'oned' or 'twod'");
    if (kind == "oned" && d != 1) r.fail("simulator 'oned' requires a 1-d grid");
    if (kind == "twod" && d != 2) r.fail("simulator 'twod' requires a 2-d grid");
    cfg.simulator = kind;
  });

  std::vector<std::string> strategy_names;
  r.read("strategies", strategy_names, "array of strings");
  if (!strategy_names.empty()) {
    cfg.strategies.clear();
    for (const std::string& s : strategy_names) {
      if (s == "la_sis")
        cfg.strategies.push_back(Strategy::LaSis);
      else if (s == "la_eb")
        cfg.strategies.push_back(Strategy::LaEb);
      else if (s == "la_homo")
        cfg.strategies.push_back(Strategy::LaHomo);
      else
        throw ConfigError(file + ": field 'strategies': unknown strategy '" + s +
                          "' (expected la_sis, la_eb, or la_homo)");
    }
  }

  r.enter("bench", [&] {
    r.read("macro_reps", cfg.bench.macro_reps, "integer");
    r.read("base_seed", cfg.bench.base_seed, "integer");
    r.read("rmse_stride", cfg.bench.rmse_stride, "integer");
    if (cfg.bench.macro_reps < 1) r.fail("macro_reps must be positive");
    if (cfg.bench.rmse_stride < 1) r.fail("rmse_stride must be positive");
  });

  r.finish_object();

  // Materialize the grid once here so bad grids are reported as config errors.
  DesignGrid grid = cfg.make_grid();
  if (!cfg.weight_values.empty() &&
      static_cast<int>(cfg.weight_values.size()) != grid.size())
    throw ConfigError(file + ": field 'weight_function.values': length " +
                      std::to_string(cfg.weight_values.size()) +
                      " does not match grid size " + std::to_string(grid.size()));
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return parse_config(text, path);
}

}  // namespace duogp
