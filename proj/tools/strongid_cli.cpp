// Command-line front end: `simulate` runs a Monte Carlo grid to CSV,
// `estimate` fits one dataset and emits the estimate as JSON, `oracle-check`
// runs the exact identity suites and fails on any violation.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "strongid/strongid.hpp"
#include "strongid/oracle_suite.hpp"

namespace {

int run_simulate(const std::string& config_path, const std::string& out_path,
                 std::uint64_t seed, bool seed_set, int threads, const std::string& split,
                 bool clever) {
  nlohmann::json j = nlohmann::json::parse(strongid::io::read_file(config_path));
  strongid::harness::ExperimentConfig cfg = strongid::harness::config_from_json(j);
  if (seed_set) cfg.base_seed = seed;
  if (threads > 0) cfg.threads = threads;
  if (!split.empty())
    cfg.estimator.split_mode = split == "crossfit" ? strongid::SplitMode::kCrossfit
                                                   : strongid::SplitMode::kSimpleSplit;
  if (clever) cfg.estimator.clever_instrument = true;
  const auto result = strongid::harness::run_grid(cfg);
  strongid::harness::write_grid_result(result, out_path);
  std::cout << out_path << ": " << result.rows.size() << " rows\n";
  return 0;
}

int run_estimate(const std::string& data_path, const std::string& mapping_path,
                 const std::string& config_path, const std::string& out_path,
                 std::uint64_t seed, const std::string& split, bool clever, double alpha) {
  const nlohmann::json mapping = nlohmann::json::parse(strongid::io::read_file(mapping_path));
  const strongid::MomentProblem p = strongid::load_problem_csv(data_path, mapping);
  strongid::CrossfitConfig cfg;
  cfg.split_mode = strongid::SplitMode::kCrossfit;
  if (!config_path.empty()) {
    nlohmann::json j = nlohmann::json::parse(strongid::io::read_file(config_path));
    strongid::harness::ExperimentConfig full;
    if (!j.contains("estimator")) j = nlohmann::json{{"estimator", j}};
    full = strongid::harness::config_from_json(j);
    cfg = full.estimator;
  }
  cfg.seed = seed;
  cfg.alpha = alpha;
  if (!split.empty())
    cfg.split_mode = split == "crossfit" ? strongid::SplitMode::kCrossfit
                                         : strongid::SplitMode::kSimpleSplit;
  if (clever) cfg.clever_instrument = true;
  const strongid::ThetaEstimate est = strongid::crossfit_estimate(p, cfg);
  const std::string text = est.to_json().dump(2) + "\n";
  if (out_path.empty() || out_path == "-")
    std::cout << text;
  else
    strongid::io::write_file(out_path, text);
  return 0;
}

int run_oracle_check(Eigen::Index dgp_n) {
  auto checks = strongid::oracle::run_discrete_checks();
  const auto dgp_checks = strongid::oracle::run_dgp_checks(dgp_n);
  checks.insert(checks.end(), dgp_checks.begin(), dgp_checks.end());
  int failures = 0;
  for (const auto& c : checks) {
    std::printf("[%s] %-55s  value %.3e  tol %.1e\n", c.pass ? "PASS" : "FAIL", c.name.c_str(),
                c.value, c.tolerance);
    if (!c.pass) ++failures;
  }
  std::printf("%d/%zu checks passed\n", static_cast<int>(checks.size()) - failures,
              checks.size());
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Penalized minimax estimation and debiased inference for linear functionals "
               "of conditional-moment nuisances"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_path, mapping_path, split;
  std::uint64_t seed = 0;
  bool clever = false;
  int threads = 0;
  double alpha = 0.05;
  Eigen::Index dgp_n = 1000000;

  auto* sim = app.add_subcommand("simulate", "Run a Monte Carlo grid from a JSON config");
  sim->add_option("--config", config_path, "experiment config (JSON)")->required();
  auto* sim_out = sim->add_option("--out", out_path, "output CSV path")->required();
  auto* sim_seed = sim->add_option("--seed", seed, "override base seed");
  sim->add_option("--threads", threads, "worker threads (default: env " +
                                            std::string(strongid::harness::kThreadsEnvVar) +
                                            " or hardware)");
  sim->add_option("--split", split, "simple|crossfit")->check(CLI::IsMember({"simple",
                                                                             "crossfit"}));
  sim->add_flag("--clever", clever, "constrain h on the fitted q direction");
  (void)sim_out;

  auto* est = app.add_subcommand("estimate", "Estimate theta from one dataset CSV");
  est->add_option("--data", data_path, "dataset CSV")->required();
  est->add_option("--mapping", mapping_path, "column-role sidecar (JSON)")->required();
  est->add_option("--config", config_path, "estimator config (JSON)");
  est->add_option("--out", out_path, "output JSON path (default: stdout)");
  est->add_option("--seed", seed, "fold-split seed");
  est->add_option("--alpha", alpha, "confidence level alpha");
  est->add_option("--split", split, "simple|crossfit")->check(CLI::IsMember({"simple",
                                                                             "crossfit"}));
  est->add_flag("--clever", clever, "constrain h on the fitted q direction");

  auto* chk = app.add_subcommand("oracle-check",
                                 "Exact identity suite + simulation oracle slopes");
  chk->add_option("--dgp-n", dgp_n, "sample size for the slope checks");

  CLI11_PARSE(app, argc, argv);
  try {
    if (sim->parsed())
      return run_simulate(config_path, out_path, seed, !sim_seed->empty(), threads, split,
                          clever);
    if (est->parsed())
      return run_estimate(data_path, mapping_path, config_path, out_path, seed, split, clever,
                          alpha);
    if (chk->parsed()) return run_oracle_check(dgp_n);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
