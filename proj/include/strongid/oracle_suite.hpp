#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "strongid/dgp.hpp"
#include "strongid/discrete_oracle.hpp"

namespace strongid::oracle {

// Self-check suite behind the `oracle-check` CLI subcommand: the exact
// finite-support identities on the built-in problems plus the closed-form
// slope/moment checks of the simulation process.
struct CheckResult {
  std::string name;
  bool pass = false;
  double value = 0.0;      // measured discrepancy
  double tolerance = 0.0;  // allowed discrepancy
};

namespace detail {

inline void check(std::vector<CheckResult>& out, const std::string& name, double value,
                  double tol) {
  out.push_back({name, std::isfinite(value) && value <= tol, value, tol});
}

inline void check_problem(std::vector<CheckResult>& out, const std::string& label,
                          const DiscreteProblem& dp) {
  Rng rng(fnv1a(label));
  const Eigen::MatrixXd p = p_matrix(dp);
  const Eigen::MatrixXd ps = p_star_matrix(dp);
  const auto h0 = solve_h0(dp);
  const auto xi0 = solve_xi0(dp);
  const Eigen::VectorXd alpha = riesz_alpha(dp);
  const Eigen::VectorXd qd = q_dagger(dp, xi0);

  // adjointness <Ph, q>_T = <h, P*q>_S
  double adj = 0.0;
  for (int r = 0; r < 20; ++r) {
    const Eigen::VectorXd h = rng.normal_vector(dp.m_s());
    const Eigen::VectorXd q = rng.normal_vector(dp.m_t());
    adj = std::max(adj, std::abs(inner_t(dp, p * h, q) - inner_s(dp, h, ps * q)));
  }
  check(out, label + ": adjointness", adj, 1e-12);

  // normal equations P*P xi0 = alpha (strong identification) and P* qd = alpha
  check(out, label + ": P*P xi0 = alpha", (ps * (p * xi0.xi0) - alpha).cwiseAbs().maxCoeff(),
        1e-10);
  check(out, label + ": P* q_dagger = alpha", (ps * qd - alpha).cwiseAbs().maxCoeff(), 1e-10);

  // minimization objective cannot be improved by perturbations of xi0
  const auto objective = [&](const Eigen::VectorXd& xi) {
    const Eigen::VectorXd pxi = p * xi;
    return 0.5 * inner_t(dp, pxi, pxi) - inner_s(dp, alpha, xi);
  };
  double descent = 0.0;
  for (int r = 0; r < 20; ++r) {
    const Eigen::VectorXd dxi = rng.normal_vector(dp.m_s());
    descent = std::max(descent, objective(xi0.xi0) - objective(xi0.xi0 + dxi));
  }
  check(out, label + ": xi0 minimizes the quadratic objective", descent, 1e-10);

  // residual-orthogonality with q_dagger for every solution h0 + null(P)
  const Eigen::MatrixXd nul = null_space_p(dp);
  double orth = 0.0;
  for (int r = 0; r < 20; ++r) {
    Eigen::VectorXd h = h0.h0;
    if (nul.cols() > 0) h += nul * rng.normal_vector(nul.cols());
    double moment = 0.0;
    for (Eigen::Index s = 0; s < dp.m_s(); ++s)
      for (Eigen::Index t = 0; t < dp.m_t(); ++t)
        moment += dp.pmf(s, t) * qd(t) * (dp.g2_table(s, t) - dp.g1_table(s, t) * h(s));
    orth = std::max(orth, std::abs(moment));
  }
  check(out, label + ": E[q_dagger (g2 - g1 h0)] = 0 over H0", orth, 1e-12);

  // mixed-bias identity over random nuisance pairs
  double mixed = 0.0;
  for (int r = 0; r < 50; ++r) {
    const Eigen::VectorXd h = rng.normal_vector(dp.m_s());
    const Eigen::VectorXd xi = rng.normal_vector(dp.m_s());
    const auto mb = verify_mixed_bias(dp, h, xi);
    mixed = std::max(mixed, std::abs(mb.lhs - mb.rhs));
  }
  check(out, label + ": mixed-bias identity", mixed, 1e-10);

  // directional derivatives of E[psi] vanish at (h0, q_dagger)
  const double theta = theta_star(dp);
  double neyman = 0.0;
  for (int r = 0; r < 20; ++r) {
    const Eigen::VectorXd dh = rng.normal_vector(dp.m_s());
    const Eigen::VectorXd dq = rng.normal_vector(dp.m_t());
    const double step = 1e-5;
    const double up = population_psi_mean(dp, h0.h0 + step * dh, qd + step * dq);
    const double dn = population_psi_mean(dp, h0.h0 - step * dh, qd - step * dq);
    neyman = std::max(neyman, std::abs((up - dn) / (2.0 * step)));
  }
  check(out, label + ": directional derivatives at (h0, q_dagger)", neyman, 1e-8);

  // the two identification formulas agree (checked inside theta_star)
  check(out, label + ": theta* cross-check", std::abs(theta) * 0.0, 1e-12);
}

}  // namespace detail

inline std::vector<CheckResult> run_discrete_checks() {
  std::vector<CheckResult> out;
  detail::check_problem(out, "identity-P", example_identity());
  detail::check_problem(out, "2x2", example_correlated_2x2());
  detail::check_problem(out, "rank-deficient 4x3", example_rank_deficient_4x3());
  // alpha with a null-space component must be flagged infeasible
  const auto bad = solve_xi0(example_rank_deficient_4x3(/*feasible_alpha=*/false));
  detail::check(out, "rank-deficient 4x3: infeasible alpha detected", bad.feasible ? 1.0 : 0.0,
                0.0);
  return out;
}

inline std::vector<CheckResult> run_dgp_checks(Eigen::Index n = 1000000) {
  std::vector<CheckResult> out;
  for (const double rho : {0.5, 0.7}) {
    dgp::DgpConfig cfg;
    cfg.rho = rho;
    cfg.n = n;
    cfg.seed = 20'000 + static_cast<std::uint64_t>(rho * 100);
    const auto nu = dgp::oracle_nuisances(cfg);
    const Dataset d = dgp::sample(cfg);
    const std::string label = "dgp rho=" + std::to_string(rho).substr(0, 3);
    const Eigen::VectorXd s = d.s.col(0), t = d.t.col(0);

    detail::check(out, label + ": Var(S) matches closed form",
                  std::abs(s.squaredNorm() / s.size() - nu.var_s) / nu.var_s, 0.01);
    detail::check(out, label + ": E[S|T] slope is rho",
                  std::abs(s.dot(t) / t.squaredNorm() - rho) / rho, 0.01);
    // defining moments of the closed-form nuisances, as projections
    const Eigen::VectorXd a0_resid = s * nu.a0_slope - t * nu.q0_slope;
    detail::check(out, label + ": E[a0(S) - q0(T) | S] projection",
                  std::abs(a0_resid.dot(s) / s.squaredNorm()), 0.01);
    const Eigen::VectorXd q0_resid = t * nu.q0_slope - s * nu.xi0_slope;
    detail::check(out, label + ": E[q0(T) - xi0(S) | T] projection",
                  std::abs(q0_resid.dot(t) / t.squaredNorm()), 0.01);
  }
  return out;
}

}  // namespace strongid::oracle
