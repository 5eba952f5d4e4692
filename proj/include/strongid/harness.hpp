#pragma once

#include <atomic>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "strongid/dataset.hpp"
#include "strongid/debiased.hpp"
#include "strongid/dgp.hpp"
#include "strongid/io.hpp"

namespace strongid::harness {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kThreadsEnvVar = "STRONGID_THREADS";

struct ExperimentCell {
  dgp::H0Kind h0_kind = dgp::H0Kind::kSin;
  Eigen::Index n = 2000;
  double rho = 0.5;

  std::string key() const {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s|%lld|%.6f", dgp::h0_name(h0_kind),
                  static_cast<long long>(n), rho);
    return buf;
  }
};

struct ExperimentConfig {
  std::vector<dgp::H0Kind> h0_kinds{dgp::H0Kind::kSin};
  std::vector<Eigen::Index> ns{2000};
  std::vector<double> rhos{0.5};
  int reps = 100;
  double alpha = 0.05;
  CrossfitConfig estimator;
  dgp::DgpConfig dgp_base;  // rho / n / h0_kind / seed overridden per cell
  Eigen::Index oracle_mc_n = 2000000;
  std::uint64_t base_seed = 0;
  int threads = 0;  // 0: take from env or hardware

  void validate() const {
    if (reps < 1) throw std::invalid_argument("reps must be at least 1");
    if (h0_kinds.empty() || ns.empty() || rhos.empty())
      throw std::invalid_argument("grid must be nonempty");
    if (!(alpha > 0 && alpha < 1)) throw std::invalid_argument("alpha must be in (0,1)");
  }
};

struct MethodRecord {
  double theta_hat = 0.0;
  std::optional<bool> covered;
};

struct RepRecord {
  bool ok = false;
  std::string error;
  std::map<Method, MethodRecord> methods;
};

struct MetricsRow {
  std::string h0;
  Eigen::Index n = 0;
  double rho = 0.0;
  Method method = Method::kDr;
  std::optional<double> cov;  // percent; absent for ipw/direct
  double rmse = 0.0;
  double bias = 0.0;
  int reps = 0;
  double theta_star_used = 0.0;
};

inline std::uint64_t replication_seed(const ExperimentConfig& cfg, const ExperimentCell& cell,
                                      int rep_index) {
  return cfg.base_seed + fnv1a(cell.key()) + static_cast<std::uint64_t>(rep_index);
}

// One Monte Carlo replication of a grid cell: sample, run all four
// estimators, record coverage where a CI exists. Solver failures surface as
// failed records, never as silently dropped replications.
inline RepRecord run_replication(const ExperimentConfig& cfg, const ExperimentCell& cell,
                                 int rep_index, double theta_star) {
  dgp::DgpConfig dcfg = cfg.dgp_base;
  dcfg.h0_kind = cell.h0_kind;
  dcfg.n = cell.n;
  dcfg.rho = cell.rho;
  dcfg.seed = replication_seed(cfg, cell, rep_index);
  RepRecord rec;
  try {
    const MomentProblem p = dgp::make_problem(dcfg);
    CrossfitConfig est = cfg.estimator;
    est.alpha = cfg.alpha;
    est.seed = dcfg.seed ^ 0x9e3779b97f4a7c15ull;  // decouple folds from the draw
    const auto by_method = estimate_all_methods(p, est);
    for (const auto& [method, th] : by_method) {
      MethodRecord mr;
      mr.theta_hat = th.theta;
      if (th.ci) mr.covered = th.ci->first <= theta_star && theta_star <= th.ci->second;
      rec.methods[method] = mr;
    }
    rec.ok = true;
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  return rec;
}

inline std::vector<MetricsRow> aggregate(const std::vector<RepRecord>& records,
                                         const ExperimentCell& cell, double theta_star) {
  std::vector<MetricsRow> rows;
  for (const Method method : kAllMethods) {
    MetricsRow row;
    row.h0 = dgp::h0_name(cell.h0_kind);
    row.n = cell.n;
    row.rho = cell.rho;
    row.method = method;
    row.theta_star_used = theta_star;
    double se_sum = 0.0, mean = 0.0;
    int n_ok = 0, n_cov = 0, covered = 0;
    for (const auto& rec : records) {
      if (!rec.ok) continue;
      const auto& mr = rec.methods.at(method);
      const double err = mr.theta_hat - theta_star;
      se_sum += err * err;
      mean += mr.theta_hat;
      ++n_ok;
      if (mr.covered) {
        ++n_cov;
        covered += *mr.covered ? 1 : 0;
      }
    }
    if (n_ok == 0) throw std::runtime_error("aggregate: no successful replication in cell " +
                                            cell.key());
    row.reps = n_ok;
    row.rmse = std::sqrt(se_sum / n_ok);
    row.bias = std::abs(mean / n_ok - theta_star);
    if (n_cov > 0) row.cov = 100.0 * covered / n_cov;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv(kThreadsEnvVar)) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Replications of one cell on a small worker pool; records land in
// replication order so aggregation is independent of scheduling.
inline std::vector<RepRecord> run_cell(const ExperimentConfig& cfg, const ExperimentCell& cell,
                                       double theta_star) {
  std::vector<RepRecord> records(cfg.reps);
  const int threads = std::min(resolve_threads(cfg.threads), cfg.reps);
  if (threads <= 1) {
    for (int r = 0; r < cfg.reps; ++r) records[r] = run_replication(cfg, cell, r, theta_star);
    return records;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const int r = next.fetch_add(1);
        if (r >= cfg.reps) return;
        records[r] = run_replication(cfg, cell, r, theta_star);
      }
    });
  }
  for (auto& th : pool) th.join();
  return records;
}

// ---------------------------------------------------------------------------
// Grid runner with CSV + manifest output
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline nlohmann::json class_spec_json(const FunctionClassSpec& s) {
  if (s.kind == FunctionClassSpec::kLinearSieve)
    return {{"kind", "sieve"},
            {"degree", s.sieve.degree},
            {"intercept", s.sieve.intercept},
            {"cross_terms", s.sieve.cross_terms}};
  return {{"kind", "rkhs"}, {"bandwidth", s.rkhs.bandwidth}};
}

}  // namespace detail

inline FunctionClassSpec class_spec_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind");
  if (kind == "sieve")
    return FunctionClassSpec::linear_sieve(j.value("degree", 1), j.value("intercept", true), 1,
                                           j.value("cross_terms", false));
  if (kind == "rkhs") return FunctionClassSpec::gaussian_rkhs(j.value("bandwidth", 0.0));
  throw std::invalid_argument("unknown function class kind '" + kind + "'");
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    cfg.h0_kinds.clear();
    for (const auto& s : g.at("h0")) cfg.h0_kinds.push_back(dgp::h0_from_name(s));
    cfg.ns = g.at("n").get<std::vector<Eigen::Index>>();
    cfg.rhos = g.at("rho").get<std::vector<double>>();
  }
  cfg.reps = j.value("reps", 100);
  cfg.alpha = j.value("alpha", 0.05);
  cfg.base_seed = j.value("base_seed", 0ull);
  cfg.oracle_mc_n = j.value("oracle_mc_n", static_cast<Eigen::Index>(2000000));
  cfg.threads = j.value("threads", 0);
  if (j.contains("estimator")) {
    const auto& e = j.at("estimator");
    cfg.estimator.split_mode = e.value("split", std::string("simple")) == "crossfit"
                                   ? SplitMode::kCrossfit
                                   : SplitMode::kSimpleSplit;
    cfg.estimator.k_folds = e.value("k_folds", 5);
    cfg.estimator.clever_instrument = e.value("clever", false);
    if (e.contains("h_class")) cfg.estimator.h_class = class_spec_from_json(e.at("h_class"));
    if (e.contains("xi_class")) cfg.estimator.xi_class = class_spec_from_json(e.at("xi_class"));
    if (e.contains("q_class")) cfg.estimator.q_class = class_spec_from_json(e.at("q_class"));
    if (e.contains("q_tilde_class"))
      cfg.estimator.q_tilde_class = class_spec_from_json(e.at("q_tilde_class"));
    if (e.contains("penalties")) {
      const auto& p = e.at("penalties");
      PenaltyConfig pen;
      pen.mu_n = p.at("mu_n");
      pen.gamma_q = p.at("gamma_q");
      pen.gamma_h = p.at("gamma_h");
      pen.gamma_xi = p.at("gamma_xi");
      pen.tilde_gamma_q = p.at("tilde_gamma_q");
      pen.jitter_scale = p.value("jitter_scale", 1e-10);
      cfg.estimator.penalties = pen;
    }
  } else {
    cfg.estimator.split_mode = SplitMode::kSimpleSplit;
  }
  if (j.contains("dgp")) {
    const auto& d = j.at("dgp");
    cfg.dgp_base.sigma_t = d.value("sigma_t", 2.0);
    cfg.dgp_base.sigma_u = d.value("sigma_u", 2.0);
    cfg.dgp_base.zeta_sd = d.value("zeta_sd", 0.1);
    cfg.dgp_base.nu_sd = d.value("nu_sd", 0.1);
    cfg.dgp_base.eps = d.value("eps", 0.1);
  }
  cfg.validate();
  return cfg;
}

struct GridResult {
  std::vector<MetricsRow> rows;
  nlohmann::json manifest;
  std::string csv_text;
};

// Runs the full grid. Rows come out ordered by (h0, n, rho, method) with the
// methods in dr/tmle/ipw/direct order; identical configs produce identical
// bytes.
inline GridResult run_grid(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<ExperimentCell> cells;
  for (const auto k : cfg.h0_kinds)
    for (const auto n : cfg.ns)
      for (const auto rho : cfg.rhos) cells.push_back({k, n, rho});
  std::sort(cells.begin(), cells.end(), [](const ExperimentCell& a, const ExperimentCell& b) {
    const int c = std::string(dgp::h0_name(a.h0_kind)).compare(dgp::h0_name(b.h0_kind));
    if (c != 0) return c < 0;
    if (a.n != b.n) return a.n < b.n;
    return a.rho < b.rho;
  });

  GridResult out;
  nlohmann::json cells_meta = nlohmann::json::array();
  for (const auto& cell : cells) {
    dgp::DgpConfig dcfg = cfg.dgp_base;
    dcfg.h0_kind = cell.h0_kind;
    dcfg.rho = cell.rho;
    dcfg.n = cell.n;
    const auto theta = dgp::oracle_theta(dcfg, cfg.oracle_mc_n,
                                         cfg.base_seed ^ fnv1a("theta*" + cell.key()));
    const auto records = run_cell(cfg, cell, theta.value);
    int failures = 0;
    nlohmann::json errors = nlohmann::json::array();
    for (int r = 0; r < cfg.reps; ++r)
      if (!records[r].ok) {
        ++failures;
        if (errors.size() < 5) errors.push_back({{"rep", r}, {"error", records[r].error}});
      }
    for (auto& row : aggregate(records, cell, theta.value)) out.rows.push_back(std::move(row));
    cells_meta.push_back({{"cell", cell.key()},
                          {"theta_star", theta.value},
                          {"theta_star_mc_se", theta.mc_se},
                          {"failures", failures},
                          {"flagged", failures * 20 > cfg.reps},  // > 5% failed reps
                          {"errors", errors}});
  }

  std::string csv = "h0,n,rho,method,cov,rmse,bias,reps\n";
  for (const auto& row : out.rows) {
    csv += row.h0 + "," + std::to_string(row.n) + "," + detail::fmt(row.rho) + "," +
           method_name(row.method) + "," + (row.cov ? detail::fmt(*row.cov) : std::string()) +
           "," + detail::fmt(row.rmse) + "," + detail::fmt(row.bias) + "," +
           std::to_string(row.reps) + "\n";
  }
  out.csv_text = std::move(csv);

  nlohmann::json grid;
  grid["h0"] = nlohmann::json::array();
  for (const auto k : cfg.h0_kinds) grid["h0"].push_back(dgp::h0_name(k));
  grid["n"] = cfg.ns;
  grid["rho"] = cfg.rhos;
  nlohmann::json h0_forms;
  for (const auto k : cfg.h0_kinds) h0_forms[dgp::h0_name(k)] = dgp::h0_formula(k);
  nlohmann::json est{{"split", cfg.estimator.split_mode == SplitMode::kSimpleSplit ? "simple"
                                                                                   : "crossfit"},
                     {"k_folds", cfg.estimator.k_folds},
                     {"clever", cfg.estimator.clever_instrument},
                     {"h_class", detail::class_spec_json(cfg.estimator.h_class)},
                     {"xi_class", detail::class_spec_json(cfg.estimator.xi_class)},
                     {"q_class", detail::class_spec_json(cfg.estimator.q_class)},
                     {"q_tilde_class", detail::class_spec_json(cfg.estimator.q_tilde_class)}};
  if (cfg.estimator.penalties) {
    const auto& p = *cfg.estimator.penalties;
    est["penalties"] = {{"mu_n", p.mu_n},           {"gamma_q", p.gamma_q},
                        {"gamma_h", p.gamma_h},     {"gamma_xi", p.gamma_xi},
                        {"tilde_gamma_q", p.tilde_gamma_q}, {"jitter_scale", p.jitter_scale}};
  } else {
    est["penalties"] = "defaults(mu=0.1 n^-0.9, gammas=0.01 n^-0.9)";
  }
  out.manifest = {{"version", kVersion},
                  {"grid", grid},
                  {"reps", cfg.reps},
                  {"alpha", cfg.alpha},
                  {"base_seed", cfg.base_seed},
                  {"oracle_mc_n", cfg.oracle_mc_n},
                  {"h0_forms", h0_forms},
                  {"dgp",
                   {{"sigma_t", cfg.dgp_base.sigma_t},
                    {"sigma_u", cfg.dgp_base.sigma_u},
                    {"zeta_sd", cfg.dgp_base.zeta_sd},
                    {"nu_sd", cfg.dgp_base.nu_sd},
                    {"eps", cfg.dgp_base.eps}}},
                  {"estimator", est},
                  {"cells", cells_meta}};
  return out;
}

inline void write_grid_result(const GridResult& res, const std::string& csv_path) {
  io::write_file(csv_path, res.csv_text);
  io::write_file(csv_path + ".manifest.json", res.manifest.dump(2) + "\n");
}

}  // namespace strongid::harness
