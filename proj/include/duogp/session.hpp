#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <zlib.h>

#include "duogp/errors.hpp"
#include "duogp/io.hpp"
#include "duogp/strategies.hpp"

namespace duogp {

// ---------------------------------------------------------------------------
// Durable sessions: a SessionState serialized to JSON with an integrity
// checksum, written atomically, so propose/observe can straddle processes.
// ---------------------------------------------------------------------------

inline constexpr int kSessionSchemaVersion = 1;

namespace detail {

using json = nlohmann::json;

inline json vec_to_json(const Vector& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Vector vec_from_json(const json& a) {
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  return v;
}

inline json mat_to_json(const Matrix& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix mat_from_json(const json& rows, int expect_cols = -1) {
  Matrix m(static_cast<Eigen::Index>(rows.size()),
           rows.empty() ? std::max(expect_cols, 0)
                        : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const json& row = rows[i];
    if (static_cast<Eigen::Index>(row.size()) != m.cols())
      throw SessionError("session: ragged matrix");
    for (std::size_t j = 0; j < row.size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j].get<double>();
  }
  return m;
}

// JSON has no +-inf/nan literals; failed-candidate scores carry +inf.
inline json num_to_json(double x) {
  if (std::isfinite(x)) return x;
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

inline double num_from_json(const json& j) {
  if (j.is_string()) {
    const std::string& s = j.get_ref<const std::string&>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw SessionError("session: bad numeric token '" + s + "'");
  }
  return j.get<double>();
}

inline json theta_to_json(const Hyperparameters& t) {
  return {{"mu0", t.mu0},
          {"sigma_f2", t.sigma_f2},
          {"sigma_v2", t.sigma_v2},
          {"lf", vec_to_json(t.lf)},
          {"lv", vec_to_json(t.lv)}};
}

inline Hyperparameters theta_from_json(const json& j) {
  Hyperparameters t;
  t.mu0 = j.at("mu0").get<double>();
  t.sigma_f2 = j.at("sigma_f2").get<double>();
  t.sigma_v2 = j.at("sigma_v2").get<double>();
  t.lf = vec_from_json(j.at("lf"));
  t.lv = vec_from_json(j.at("lv"));
  return t;
}

inline json priors_to_json(const PriorSpec& p) {
  auto gammas = [](const std::vector<GammaPrior>& gs) {
    json a = json::array();
    for (const GammaPrior& g : gs) a.push_back({{"shape", g.shape}, {"rate", g.rate}});
    return a;
  };
  return {{"mu0_mean", p.mu0_mean}, {"mu0_var", p.mu0_var},
          {"alpha_f", p.alpha_f},   {"beta_f", p.beta_f},
          {"alpha_v", p.alpha_v},   {"beta_v", p.beta_v},
          {"lf", gammas(p.lf)},     {"lv", gammas(p.lv)}};
}

inline PriorSpec priors_from_json(const json& j) {
  PriorSpec p;
  p.mu0_mean = j.at("mu0_mean").get<double>();
  p.mu0_var = j.at("mu0_var").get<double>();
  p.alpha_f = j.at("alpha_f").get<double>();
  p.beta_f = j.at("beta_f").get<double>();
  p.alpha_v = j.at("alpha_v").get<double>();
  p.beta_v = j.at("beta_v").get<double>();
  auto gammas = [](const json& a) {
    std::vector<GammaPrior> gs;
    for (const json& g : a) gs.push_back({g.at("shape").get<double>(), g.at("rate").get<double>()});
    return gs;
  };
  p.lf = gammas(j.at("lf"));
  p.lv = gammas(j.at("lv"));
  return p;
}

inline json setup_to_json(const RunSetup& rs) {
  json j;
  j["grid"] = {{"low", vec_to_json(rs.grid.low())},
               {"high", vec_to_json(rs.grid.high())},
               {"stride", vec_to_json(rs.grid.spacing())}};
  j["priors"] = priors_to_json(rs.priors);
  j["kernel"] = kernel_family_name(rs.kernel);
  j["jitter"] = rs.jitter;
  j["weight_values"] = vec_to_json(rs.weight_fn.values);
  j["cfg"] = {{"strategy", strategy_name(rs.cfg.strategy)},
              {"label", rs.cfg.label},
              {"tau", rs.cfg.tau},
              {"n1", rs.cfg.n1},
              {"n2", rs.cfg.n2},
              {"budget", rs.cfg.budget},
              {"chain",
               {{"total_iterations", rs.cfg.chain.total_iterations},
                {"burn_in", rs.cfg.chain.burn_in},
                {"thin", rs.cfg.chain.thin},
                {"target_accept", rs.cfg.chain.target_accept},
                {"max_tree_depth", rs.cfg.chain.max_tree_depth}}},
              {"analytic_noise", rs.cfg.analytic_noise},
              {"workers", rs.cfg.workers}};
  j["seed"] = rs.seed;
  return j;
}

inline RunSetup setup_from_json(const json& j) {
  RunSetup rs;
  const json& g = j.at("grid");
  rs.grid = make_grid(vec_from_json(g.at("low")), vec_from_json(g.at("high")),
                      vec_from_json(g.at("stride")));
  rs.priors = priors_from_json(j.at("priors"));
  std::string kn = j.at("kernel").get<std::string>();
  if (kn == kernel_family_name(KernelFamily::SquaredExponential))
    rs.kernel = KernelFamily::SquaredExponential;
  else if (kn == kernel_family_name(KernelFamily::Matern32))
    rs.kernel = KernelFamily::Matern32;
  else
    throw SessionError("session: unknown kernel '" + kn + "'");
  rs.jitter = j.at("jitter").get<double>();
  rs.weight_fn.values = vec_from_json(j.at("weight_values"));
  const json& c = j.at("cfg");
  std::string sn = c.at("strategy").get<std::string>();
  if (sn == "la_sis")
    rs.cfg.strategy = Strategy::LaSis;
  else if (sn == "la_eb")
    rs.cfg.strategy = Strategy::LaEb;
  else if (sn == "la_homo")
    rs.cfg.strategy = Strategy::LaHomo;
  else
    throw SessionError("session: unknown strategy '" + sn + "'");
  rs.cfg.label = c.at("label").get<std::string>();
  rs.cfg.tau = c.at("tau").get<double>();
  rs.cfg.n1 = c.at("n1").get<int>();
  rs.cfg.n2 = c.at("n2").get<int>();
  rs.cfg.budget = c.at("budget").get<int>();
  const json& ch = c.at("chain");
  rs.cfg.chain.total_iterations = ch.at("total_iterations").get<int>();
  rs.cfg.chain.burn_in = ch.at("burn_in").get<int>();
  rs.cfg.chain.thin = ch.at("thin").get<int>();
  rs.cfg.chain.target_accept = ch.at("target_accept").get<double>();
  rs.cfg.chain.max_tree_depth = ch.at("max_tree_depth").get<int>();
  rs.cfg.analytic_noise = c.at("analytic_noise").get<bool>();
  rs.cfg.workers = c.at("workers").get<int>();
  rs.seed = j.at("seed").get<std::uint64_t>();
  return rs;
}

inline json report_to_json(const CriterionReport& r) {
  json scores = json::array();
  for (const CandidateScore& s : r.scores)
    scores.push_back({{"index", s.index}, {"value", num_to_json(s.value)}, {"y_hat", s.y_hat}});
  return {{"scores", std::move(scores)},
          {"selected_index", r.selected_index},
          {"clamped", r.clamped},
          {"evaluations", r.evaluations}};
}

inline CriterionReport report_from_json(const json& j) {
  CriterionReport r;
  for (const json& s : j.at("scores")) {
    CandidateScore cs;
    cs.index = s.at("index").get<int>();
    cs.value = num_from_json(s.at("value"));
    cs.y_hat = s.at("y_hat").get<double>();
    r.scores.push_back(cs);
  }
  r.selected_index = j.at("selected_index").get<int>();
  r.clamped = j.at("clamped").get<long>();
  r.evaluations = j.at("evaluations").get<long>();
  return r;
}

}  // namespace detail

inline nlohmann::json session_to_json(const SessionState& s) {
  using detail::json;
  json j;
  j["setup"] = detail::setup_to_json(s.setup);
  j["data"] = {{"points", detail::mat_to_json(s.data.points)},
               {"values", detail::vec_to_json(s.data.values)},
               {"n0", s.data.n0}};
  j["iteration"] = s.iteration;
  if (s.pending) {
    const PendingProposal& p = *s.pending;
    j["pending"] = {{"candidate_index", p.candidate_index},
                    {"point", detail::vec_to_json(p.point)},
                    {"y_hat", p.y_hat},
                    {"criterion", p.criterion},
                    {"augment_draws", detail::vec_to_json(p.augment_draws)},
                    {"ess_lookahead", p.ess_lookahead},
                    {"propose_seconds", p.propose_seconds},
                    {"report", detail::report_to_json(p.report)}};
  } else {
    j["pending"] = nullptr;
  }
  json parts = json::array();
  for (const Particle& p : s.particles.particles)
    parts.push_back({{"weight", p.weight},
                     {"theta", detail::theta_to_json(p.state.theta)},
                     {"v", detail::vec_to_json(p.state.v)}});
  j["particles"] = {{"degenerate", s.particles.degenerate}, {"items", std::move(parts)}};
  if (s.theta_hat)
    j["theta_hat"] = detail::theta_to_json(*s.theta_hat);
  else
    j["theta_hat"] = nullptr;
  json homos = json::array();
  for (const HomoParameters& h : s.homo_draws)
    homos.push_back({{"sigma_f2", h.sigma_f2},
                     {"sigma_v2", h.sigma_v2},
                     {"lf", detail::vec_to_json(h.lf)}});
  j["homo_draws"] = std::move(homos);
  j["warm_mean"] = detail::vec_to_json(s.warm_mean);
  json recs = json::array();
  for (const IterationRecord& r : s.records)
    recs.push_back({{"iteration", r.iteration},
                    {"candidate_index", r.candidate_index},
                    {"point", detail::vec_to_json(r.point)},
                    {"y", r.y},
                    {"y_hat", r.y_hat},
                    {"criterion", r.criterion},
                    {"ess", r.ess},
                    {"refreshed", r.refreshed},
                    {"seconds", r.seconds}});
  j["records"] = std::move(recs);
  j["clamped"] = s.clamped;
  j["evaluations"] = s.evaluations;
  j["refresh_count"] = s.refresh_count;
  return j;
}

inline SessionState session_from_json(const nlohmann::json& j) {
  using detail::json;
  SessionState s;
  s.setup = detail::setup_from_json(j.at("setup"));
  const json& d = j.at("data");
  Matrix pts = detail::mat_from_json(d.at("points"), s.setup.grid.dim());
  Vector vals = detail::vec_from_json(d.at("values"));
  int n0 = d.at("n0").get<int>();
  if (pts.rows() != vals.size() || n0 < 0 || n0 > pts.rows())
    throw SessionError("session: inconsistent observation block");
  s.data = ObservationSet::initial(pts, vals);
  s.data.n0 = n0;
  s.data.n = static_cast<int>(pts.rows()) - n0;
  s.iteration = j.at("iteration").get<int>();
  const json& pend = j.at("pending");
  if (!pend.is_null()) {
    PendingProposal p;
    p.candidate_index = pend.at("candidate_index").get<int>();
    p.point = detail::vec_from_json(pend.at("point"));
    p.y_hat = pend.at("y_hat").get<double>();
    p.criterion = pend.at("criterion").get<double>();
    p.augment_draws = detail::vec_from_json(pend.at("augment_draws"));
    p.ess_lookahead = pend.at("ess_lookahead").get<double>();
    p.propose_seconds = pend.at("propose_seconds").get<double>();
    p.report = detail::report_from_json(pend.at("report"));
    s.pending = std::move(p);
  }
  const json& ps = j.at("particles");
  s.particles.degenerate = ps.at("degenerate").get<bool>();
  for (const json& pj : ps.at("items")) {
    Particle p;
    p.weight = pj.at("weight").get<double>();
    p.state.theta = detail::theta_from_json(pj.at("theta"));
    p.state.v = detail::vec_from_json(pj.at("v"));
    s.particles.particles.push_back(std::move(p));
  }
  if (!j.at("theta_hat").is_null()) s.theta_hat = detail::theta_from_json(j.at("theta_hat"));
  for (const json& hj : j.at("homo_draws")) {
    HomoParameters h;
    h.sigma_f2 = hj.at("sigma_f2").get<double>();
    h.sigma_v2 = hj.at("sigma_v2").get<double>();
    h.lf = detail::vec_from_json(hj.at("lf"));
    s.homo_draws.push_back(std::move(h));
  }
  s.warm_mean = detail::vec_from_json(j.at("warm_mean"));
  for (const json& rj : j.at("records")) {
    IterationRecord r;
    r.iteration = rj.at("iteration").get<int>();
    r.candidate_index = rj.at("candidate_index").get<int>();
    r.point = detail::vec_from_json(rj.at("point"));
    r.y = rj.at("y").get<double>();
    r.y_hat = rj.at("y_hat").get<double>();
    r.criterion = rj.at("criterion").get<double>();
    r.ess = rj.at("ess").get<double>();
    r.refreshed = rj.at("refreshed").get<bool>();
    r.seconds = rj.at("seconds").get<double>();
    s.records.push_back(std::move(r));
  }
  s.clamped = j.at("clamped").get<long>();
  s.evaluations = j.at("evaluations").get<long>();
  s.refresh_count = j.at("refresh_count").get<int>();
  return s;
}

namespace detail {

inline std::string crc32_hex(const std::string& bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()),
                static_cast<uInt>(bytes.size()));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return std::string(buf);
}

}  // namespace detail

// Writes `{schema_version, checksum, body}` atomically.  The checksum covers
// the canonical (sorted-key, shortest-round-trip) serialization of the body.
inline void save_session(const SessionState& s, const std::string& path) {
  nlohmann::json body = session_to_json(s);
  std::string payload = body.dump();
  nlohmann::json file;
  file["schema_version"] = kSessionSchemaVersion;
  file["checksum"] = detail::crc32_hex(payload);
  file["body"] = std::move(body);
  write_file_atomic(path, file.dump(1) + "\n");
}

inline SessionState load_session(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw SessionError(std::string("session: ") + e.what());
  }
  nlohmann::json file;
  try {
    file = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SessionError(path + ": not valid JSON: " + e.what());
  }
  try {
    int version = file.at("schema_version").get<int>();
    if (version != kSessionSchemaVersion)
      throw SessionError(path + ": unsupported session schema version " +
                         std::to_string(version));
    std::string expect = file.at("checksum").get<std::string>();
    std::string actual = detail::crc32_hex(file.at("body").dump());
    if (expect != actual)
      throw SessionError(path + ": checksum mismatch (file is corrupt or was edited)");
    return session_from_json(file.at("body"));
  } catch (const SessionError&) {
    throw;
  } catch (const std::exception& e) {
    throw SessionError(path + ": malformed session: " + e.what());
  }
}

}  // namespace duogp
