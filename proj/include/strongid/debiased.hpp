#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "strongid/dataset.hpp"
#include "strongid/linalg.hpp"
#include "strongid/minimax.hpp"
#include "strongid/rng.hpp"

namespace strongid {

enum class Method { kDr, kTmle, kIpw, kDirect };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::kDr: return "dr";
    case Method::kTmle: return "tmle";
    case Method::kIpw: return "ipw";
    case Method::kDirect: return "direct";
  }
  return "?";
}

inline constexpr Method kAllMethods[] = {Method::kDr, Method::kTmle, Method::kIpw,
                                         Method::kDirect};

enum class SplitMode { kCrossfit, kSimpleSplit };

struct CrossfitConfig {
  int k_folds = 5;
  SplitMode split_mode = SplitMode::kCrossfit;
  std::uint64_t seed = 0;
  std::optional<PenaltyConfig> penalties;  // absent: PenaltyConfig::defaults_for(train size)
  FunctionClassSpec h_class = FunctionClassSpec::gaussian_rkhs();
  FunctionClassSpec xi_class = FunctionClassSpec::gaussian_rkhs();
  FunctionClassSpec q_class = FunctionClassSpec::gaussian_rkhs();
  FunctionClassSpec q_tilde_class = FunctionClassSpec::gaussian_rkhs();
  bool clever_instrument = false;
  double alpha = 0.05;
};

// Per-fold nuisance handles kept on the estimate for diagnostics and
// persistence.
struct FoldArtifacts {
  std::vector<Eigen::Index> eval_rows;
  FittedFunction h, xi, q;
  double epsilon = 0.0;
  FittedFunction h1;
};

struct ThetaEstimate {
  double theta = 0.0;
  std::optional<double> se;
  std::optional<std::pair<double, double>> ci;
  double alpha = 0.05;
  Method method = Method::kDr;
  Eigen::Index n_psi = 0;  // observations entering the final average
  int k_folds = 0;
  std::uint64_t seed = 0;
  std::shared_ptr<const std::vector<FoldArtifacts>> folds;

  nlohmann::json to_json() const {
    nlohmann::json j{{"method", method_name(method)}, {"theta", theta},
                     {"alpha", alpha},                {"n", n_psi},
                     {"k_folds", k_folds},            {"seed", seed}};
    if (se) j["se"] = *se;
    if (ci) j["ci"] = {ci->first, ci->second};
    return j;
  }
};

// ---------------------------------------------------------------------------
// Influence function and variance
// ---------------------------------------------------------------------------

// psi_i = m(W_i; h) + q(T_i) (g2_i - g1_i h(S_i))
inline Eigen::VectorXd psi_values(const FittedFunction& h, const FittedFunction& q,
                                  const MomentProblem& p) {
  const Eigen::VectorXd m_vals = p.functional.values(h, p.data);
  return m_vals + q.evaluate(p.data.t).cwiseProduct(residual(h, p.data));
}

inline Eigen::VectorXd psi_values(const FittedFunction& h, const FittedFunction& q,
                                  const MomentProblem& p,
                                  std::span<const Eigen::Index> rows) {
  const MomentProblem sub{subset_rows(p.data, rows), p.functional};
  return psi_values(h, q, sub);
}

struct VarianceCi {
  double se = 0.0;
  std::pair<double, double> ci{0.0, 0.0};
};

// sigma^2 = (1/K) sum_k fold-mean of (theta - psi_i)^2; Wald interval
// theta -+ z_{1-alpha/2} sigma / sqrt(n).
inline VarianceCi variance_and_ci(const std::vector<Eigen::VectorXd>& psi_by_fold, double theta,
                                  double alpha, Eigen::Index n) {
  if (n <= 0) throw std::invalid_argument("variance_and_ci: n must be positive");
  if (psi_by_fold.empty()) throw std::invalid_argument("variance_and_ci: no folds");
  double acc = 0.0;
  for (const auto& psi : psi_by_fold) {
    if (!psi.allFinite()) throw std::invalid_argument("variance_and_ci: non-finite psi");
    acc += (psi.array() - theta).square().mean();
  }
  const double sigma2 = acc / static_cast<double>(psi_by_fold.size());
  VarianceCi out;
  out.se = std::sqrt(sigma2 / static_cast<double>(n));
  const double z = linalg::normal_quantile(1.0 - alpha / 2.0);
  out.ci = {theta - z * out.se, theta + z * out.se};
  return out;
}

// ---------------------------------------------------------------------------
// Targeted correction
// ---------------------------------------------------------------------------

// One-dimensional fluctuation h1 = h0 + eps xi with eps chosen to zero the
// key moment E_n[q(T)(g2 - g1 h1(S))] on the given rows.
struct TmleStep {
  double epsilon = 0.0;
  FittedFunction h1;
};

inline TmleStep tmle_step(const FittedFunction& h0, const FittedFunction& xi,
                          const FittedFunction& q, const MomentProblem& p,
                          std::span<const Eigen::Index> rows) {
  const Dataset d = subset_rows(p.data, rows);
  const Eigen::VectorXd qv = q.evaluate(d.t);
  const Eigen::VectorXd num_terms = qv.cwiseProduct(d.g2 - d.g1.cwiseProduct(h0.evaluate(d.s)));
  const Eigen::VectorXd den_terms = qv.cwiseProduct(d.g1.cwiseProduct(xi.evaluate(d.s)));
  const double den = den_terms.mean();
  const double den_scale = 1.0 + den_terms.cwiseAbs().mean();
  if (std::abs(den) < 1e-12 * den_scale)
    throw SolverError("tmle_step: correction direction orthogonal to the moment");
  TmleStep out;
  out.epsilon = num_terms.mean() / den;
  out.h1 = h0.plus_scaled(out.epsilon, xi);
  const double post = num_terms.mean() - out.epsilon * den;
  const double scale = 1.0 + d.g2.norm() / std::sqrt(static_cast<double>(d.g2.size()));
  if (std::abs(post) > 1e-10 * scale)
    throw SolverError("tmle_step: corrected moment did not vanish");
  return out;
}

inline TmleStep tmle_step(const FittedFunction& h0, const FittedFunction& xi,
                          const FittedFunction& q, const MomentProblem& p) {
  std::vector<Eigen::Index> rows(p.data.n());
  for (Eigen::Index i = 0; i < p.data.n(); ++i) rows[i] = i;
  return tmle_step(h0, xi, q, p, rows);
}

// ---------------------------------------------------------------------------
// Cross-fitting
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::vector<Eigen::Index>> make_folds(Eigen::Index n, int k,
                                                         std::uint64_t seed) {
  std::vector<Eigen::Index> idx(n);
  for (Eigen::Index i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  std::vector<std::vector<Eigen::Index>> folds(k);
  for (Eigen::Index i = 0; i < n; ++i)
    folds[static_cast<std::size_t>(i) % static_cast<std::size_t>(k)].push_back(idx[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

struct NuisanceFits {
  FittedFunction h, xi, q;
};

// Fits (xi, q, h) on one training sample. The test operator and, when h and
// xi share a class, the quadratic core are assembled once.
inline NuisanceFits fit_nuisances(const MomentProblem& train, const CrossfitConfig& cfg) {
  const PenaltyConfig pen =
      cfg.penalties ? *cfg.penalties : PenaltyConfig::defaults_for(train.data.n());
  pen.validate();
  const TestOperator omega(cfg.q_class, train.data.t, pen.gamma_q, pen.jitter_scale);

  const Basis xi_basis = make_basis(cfg.xi_class, train.data.s);
  const auto xi_core = assemble_core(xi_basis, train.data, omega);
  const Eigen::VectorXd mbar =
      train.functional.dictionary_means
          ? train.functional.dictionary_means(xi_basis.design, train.data)
          : generic_dictionary_means(train.functional.eval_all)(xi_basis.design, train.data);
  NuisanceFits out;
  out.xi = xi_basis.package(
      solve_xi_coefficients(xi_core, mbar, pen.gamma_xi * xi_basis.norm_gram, pen.jitter_scale));
  out.q = project_q(train, out.xi, cfg.q_tilde_class, pen.tilde_gamma_q, pen.jitter_scale);

  const bool share = cfg.h_class == cfg.xi_class;
  const Basis h_basis = share ? xi_basis : make_basis(cfg.h_class, train.data.s);
  const auto& h_core = share ? xi_core : assemble_core(h_basis, train.data, omega);
  const Eigen::MatrixXd reg = pen.gamma_h * h_basis.norm_gram;
  if (cfg.clever_instrument) {
    const Eigen::VectorXd qdag_vals = out.q.evaluate(train.data.t);
    out.h = h_basis.package(solve_h_coefficients_constrained(
        h_core, train.data.g2, pen.mu_n, reg, qdag_vals, pen.jitter_scale));
  } else {
    out.h = h_basis.package(
        solve_h_coefficients(h_core, train.data.g2, pen.mu_n, reg, pen.jitter_scale));
  }
  return out;
}

struct CrossfitRun {
  std::shared_ptr<std::vector<FoldArtifacts>> folds;
  std::vector<Eigen::VectorXd> psi_dr;      // psi(h, q) per evaluation fold
  std::vector<Eigen::VectorXd> psi_tmle;    // psi(h1, q) per evaluation fold
  std::vector<Eigen::VectorXd> m_direct;    // m(W; h) per evaluation fold
  std::vector<Eigen::VectorXd> m_tmle;      // m(W; h1) per evaluation fold
  std::vector<Eigen::VectorXd> ipw_terms;   // q(T) g2 per evaluation fold
  Eigen::Index n_psi = 0;
};

inline CrossfitRun run_crossfit(const MomentProblem& p, const CrossfitConfig& cfg) {
  validate_problem(p);
  const Eigen::Index n = p.data.n();
  const int k = cfg.split_mode == SplitMode::kSimpleSplit ? 2 : cfg.k_folds;
  if (k < 2) throw std::invalid_argument("k_folds must be at least 2");
  if (n < 2 * k) throw std::invalid_argument("need n >= 2 k_folds");
  const auto folds = make_folds(n, k, cfg.seed);

  CrossfitRun run;
  run.folds = std::make_shared<std::vector<FoldArtifacts>>();
  // In simple-split mode nuisances are fit on fold 0 and psi is averaged on
  // fold 1 only; in cross-fitting mode every fold is evaluated once with
  // nuisances fit on its complement.
  const std::size_t first_eval = cfg.split_mode == SplitMode::kSimpleSplit ? 1 : 0;
  for (std::size_t ik = first_eval; ik < folds.size(); ++ik) {
    std::vector<Eigen::Index> train_rows;
    if (cfg.split_mode == SplitMode::kSimpleSplit) {
      train_rows = folds[0];
    } else {
      for (std::size_t jk = 0; jk < folds.size(); ++jk)
        if (jk != ik) train_rows.insert(train_rows.end(), folds[jk].begin(), folds[jk].end());
      std::sort(train_rows.begin(), train_rows.end());
    }
    const MomentProblem train{subset_rows(p.data, train_rows), p.functional};
    NuisanceFits fits;
    try {
      fits = fit_nuisances(train, cfg);
    } catch (const SolverError& e) {
      throw SolverError("fold " + std::to_string(ik) + ": " + e.what());
    }

    const MomentProblem eval{subset_rows(p.data, folds[ik]), p.functional};
    const Eigen::VectorXd qv = fits.q.evaluate(eval.data.t);
    const Eigen::VectorXd m_h = p.functional.values(fits.h, eval.data);
    const Eigen::VectorXd resid_h = residual(fits.h, eval.data);

    TmleStep step;
    try {
      std::vector<Eigen::Index> all(eval.data.n());
      for (Eigen::Index i = 0; i < eval.data.n(); ++i) all[i] = i;
      step = tmle_step(fits.h, fits.xi, fits.q, eval, all);
    } catch (const SolverError& e) {
      throw SolverError("fold " + std::to_string(ik) + ": " + e.what());
    }
    const Eigen::VectorXd m_h1 = p.functional.values(step.h1, eval.data);
    const Eigen::VectorXd resid_h1 = residual(step.h1, eval.data);

    run.psi_dr.push_back(m_h + qv.cwiseProduct(resid_h));
    run.psi_tmle.push_back(m_h1 + qv.cwiseProduct(resid_h1));
    run.m_direct.push_back(m_h);
    run.m_tmle.push_back(m_h1);
    run.ipw_terms.push_back(qv.cwiseProduct(eval.data.g2));
    run.n_psi += eval.data.n();

    FoldArtifacts art;
    art.eval_rows = folds[ik];
    art.h = fits.h;
    art.xi = fits.xi;
    art.q = fits.q;
    art.epsilon = step.epsilon;
    art.h1 = step.h1;
    run.folds->push_back(std::move(art));
  }
  return run;
}

inline double grand_mean(const std::vector<Eigen::VectorXd>& by_fold) {
  double sum = 0.0;
  Eigen::Index count = 0;
  for (const auto& v : by_fold) {
    sum += v.sum();
    count += v.size();
  }
  return sum / static_cast<double>(count);
}

}  // namespace detail

// The doubly robust cross-fitted estimator with plug-in standard error.
inline ThetaEstimate crossfit_estimate(const MomentProblem& p, const CrossfitConfig& cfg) {
  const auto run = detail::run_crossfit(p, cfg);
  ThetaEstimate est;
  est.method = Method::kDr;
  est.theta = detail::grand_mean(run.psi_dr);
  const auto vc = variance_and_ci(run.psi_dr, est.theta, cfg.alpha, run.n_psi);
  est.se = vc.se;
  est.ci = vc.ci;
  est.alpha = cfg.alpha;
  est.n_psi = run.n_psi;
  est.k_folds = cfg.split_mode == SplitMode::kSimpleSplit ? 2 : cfg.k_folds;
  est.seed = cfg.seed;
  est.folds = run.folds;
  return est;
}

// dr, tmle, ipw and direct estimates from a single set of per-fold fits.
// dr/tmle carry plug-in standard errors; ipw/direct report none.
inline std::map<Method, ThetaEstimate> estimate_all_methods(const MomentProblem& p,
                                                            const CrossfitConfig& cfg) {
  const auto run = detail::run_crossfit(p, cfg);
  std::map<Method, ThetaEstimate> out;
  const int k_folds = cfg.split_mode == SplitMode::kSimpleSplit ? 2 : cfg.k_folds;
  auto base = [&](Method m) {
    ThetaEstimate est;
    est.method = m;
    est.alpha = cfg.alpha;
    est.n_psi = run.n_psi;
    est.k_folds = k_folds;
    est.seed = cfg.seed;
    est.folds = run.folds;
    return est;
  };

  ThetaEstimate dr = base(Method::kDr);
  dr.theta = detail::grand_mean(run.psi_dr);
  const auto vc_dr = variance_and_ci(run.psi_dr, dr.theta, cfg.alpha, run.n_psi);
  dr.se = vc_dr.se;
  dr.ci = vc_dr.ci;
  out.emplace(Method::kDr, std::move(dr));

  ThetaEstimate tm = base(Method::kTmle);
  tm.theta = detail::grand_mean(run.m_tmle);
  const auto vc_tm = variance_and_ci(run.psi_tmle, tm.theta, cfg.alpha, run.n_psi);
  tm.se = vc_tm.se;
  tm.ci = vc_tm.ci;
  out.emplace(Method::kTmle, std::move(tm));

  ThetaEstimate ipw = base(Method::kIpw);
  ipw.theta = detail::grand_mean(run.ipw_terms);
  out.emplace(Method::kIpw, std::move(ipw));

  ThetaEstimate direct = base(Method::kDirect);
  direct.theta = detail::grand_mean(run.m_direct);
  out.emplace(Method::kDirect, std::move(direct));
  return out;
}

}  // namespace strongid
