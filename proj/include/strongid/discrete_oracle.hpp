#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "strongid/dataset.hpp"
#include "strongid/linalg.hpp"
#include "strongid/rng.hpp"

namespace strongid::oracle {

// A finite-support joint distribution on (S, T) on which the identification
// theory is exact dense linear algebra: the conditional-moment operator P,
// its adjoint P*, the representer alpha, the solution sets, theta*, and the
// mixed-bias identity are all computable to machine precision.
struct DiscreteProblem {
  Eigen::VectorXd s_support;  // m_s points
  Eigen::VectorXd t_support;  // m_t points
  Eigen::MatrixXd pmf;        // m_s x m_t, entries >= 0 summing to 1
  Eigen::MatrixXd g1_table;   // m_s x m_t
  Eigen::MatrixXd g2_table;   // m_s x m_t
  Eigen::VectorXd m_weights;  // m_s; E[m(W; h)] = sum_s m_weights(s) h(s)

  Eigen::Index m_s() const { return s_support.size(); }
  Eigen::Index m_t() const { return t_support.size(); }

  Eigen::VectorXd marg_s() const { return pmf.rowwise().sum(); }
  Eigen::VectorXd marg_t() const { return pmf.colwise().sum().transpose(); }

  void validate() const {
    if (pmf.rows() != m_s() || pmf.cols() != m_t())
      throw std::invalid_argument("pmf shape does not match supports");
    if (g1_table.rows() != m_s() || g1_table.cols() != m_t() || g2_table.rows() != m_s() ||
        g2_table.cols() != m_t())
      throw std::invalid_argument("table shape does not match supports");
    if (m_weights.size() != m_s()) throw std::invalid_argument("m_weights length mismatch");
    if ((pmf.array() < 0).any()) throw std::invalid_argument("pmf has negative entries");
    if (std::abs(pmf.sum() - 1.0) > 1e-12) throw std::invalid_argument("pmf does not sum to 1");
    if ((marg_s().array() <= 0).any() || (marg_t().array() <= 0).any())
      throw std::invalid_argument("zero-probability support point");
  }

  nlohmann::json to_json() const {
    auto vec = [](const Eigen::VectorXd& v) {
      return std::vector<double>(v.data(), v.data() + v.size());
    };
    auto mat = [](const Eigen::MatrixXd& m) {
      std::vector<std::vector<double>> rows;
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<double> r(m.cols());
        for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
        rows.push_back(std::move(r));
      }
      return rows;
    };
    return {{"s_support", vec(s_support)}, {"t_support", vec(t_support)}, {"pmf", mat(pmf)},
            {"g1", mat(g1_table)},         {"g2", mat(g2_table)},         {"m_weights",
                                                                           vec(m_weights)}};
  }

  static DiscreteProblem from_json(const nlohmann::json& j) {
    auto vec = [&](const char* key) {
      const auto v = j.at(key).get<std::vector<double>>();
      return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()))
          .eval();
    };
    auto mat = [&](const char* key) {
      const auto rows = j.at(key).get<std::vector<std::vector<double>>>();
      Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                        rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
          m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      return m;
    };
    DiscreteProblem dp{vec("s_support"), vec("t_support"), mat("pmf"),
                       mat("g1"),        mat("g2"),        vec("m_weights")};
    dp.validate();
    return dp;
  }
};

// [Ph](t) = E[g1(W) h(S) | T = t], as an m_t x m_s matrix acting on h-vectors.
inline Eigen::MatrixXd p_matrix(const DiscreteProblem& dp) {
  const Eigen::VectorXd mt = dp.marg_t();
  Eigen::MatrixXd p(dp.m_t(), dp.m_s());
  for (Eigen::Index t = 0; t < dp.m_t(); ++t)
    for (Eigen::Index s = 0; s < dp.m_s(); ++s)
      p(t, s) = dp.g1_table(s, t) * dp.pmf(s, t) / mt(t);
  return p;
}

// [P*q](s) = E[g1(W) q(T) | S = s]; the adjoint of P under the marginal
// inner products <a,b>_S = sum_s marg_s(s) a(s) b(s), <.,.>_T likewise.
inline Eigen::MatrixXd p_star_matrix(const DiscreteProblem& dp) {
  const Eigen::VectorXd ms = dp.marg_s();
  Eigen::MatrixXd ps(dp.m_s(), dp.m_t());
  for (Eigen::Index s = 0; s < dp.m_s(); ++s)
    for (Eigen::Index t = 0; t < dp.m_t(); ++t)
      ps(s, t) = dp.g1_table(s, t) * dp.pmf(s, t) / ms(s);
  return ps;
}

inline double inner_s(const DiscreteProblem& dp, const Eigen::VectorXd& a,
                      const Eigen::VectorXd& b) {
  return (dp.marg_s().array() * a.array() * b.array()).sum();
}

inline double inner_t(const DiscreteProblem& dp, const Eigen::VectorXd& a,
                      const Eigen::VectorXd& b) {
  return (dp.marg_t().array() * a.array() * b.array()).sum();
}

// alpha(s) = m_weights(s) / marg_s(s), the unique function with
// E[m(W; h)] = E[alpha(S) h(S)] for all h on the support.
inline Eigen::VectorXd riesz_alpha(const DiscreteProblem& dp) {
  return (dp.m_weights.array() / dp.marg_s().array()).matrix();
}

// r0(t) = E[g2 | T = t]
inline Eigen::VectorXd r0_vector(const DiscreteProblem& dp) {
  const Eigen::VectorXd mt = dp.marg_t();
  Eigen::VectorXd r(dp.m_t());
  for (Eigen::Index t = 0; t < dp.m_t(); ++t) {
    double acc = 0.0;
    for (Eigen::Index s = 0; s < dp.m_s(); ++s) acc += dp.g2_table(s, t) * dp.pmf(s, t);
    r(t) = acc / mt(t);
  }
  return r;
}

namespace detail {

// Min-norm least squares of the S-weighted system A x = b: conjugating by
// sqrt-marginal diagonals turns the weighted geometry into the Euclidean one,
// where the SVD cutoff and the minimum-norm tie-break are standard.
inline linalg::LstsqResult weighted_lstsq(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                          const Eigen::VectorXd& row_w,
                                          const Eigen::VectorXd& col_w) {
  const Eigen::VectorXd rw = row_w.array().sqrt();
  const Eigen::VectorXd cw = col_w.array().sqrt();
  const Eigen::MatrixXd at = rw.asDiagonal() * a * cw.cwiseInverse().asDiagonal();
  auto res = linalg::min_norm_lstsq(at, rw.asDiagonal() * b);
  res.x = res.x.cwiseQuotient(cw);
  return res;
}

// Orthonormal basis (in the weighted geometry) of the null space of the
// transformed matrix, mapped back to function space.
inline Eigen::MatrixXd weighted_null_space(const Eigen::MatrixXd& a,
                                           const Eigen::VectorXd& row_w,
                                           const Eigen::VectorXd& col_w) {
  const Eigen::VectorXd rw = row_w.array().sqrt();
  const Eigen::VectorXd cw = col_w.array().sqrt();
  const Eigen::MatrixXd at = rw.asDiagonal() * a * cw.cwiseInverse().asDiagonal();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(at, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double cut = sv.size() > 0 ? 1e-10 * sv(0) : 0.0;
  Eigen::Index rank = 0;
  while (rank < sv.size() && sv(rank) > cut) ++rank;
  const Eigen::Index dim = at.cols() - rank;
  Eigen::MatrixXd out(at.cols(), dim);
  for (Eigen::Index j = 0; j < dim; ++j)
    out.col(j) = svd.matrixV().col(rank + j).cwiseQuotient(cw);
  return out;
}

}  // namespace detail

inline Eigen::MatrixXd null_space_p(const DiscreteProblem& dp) {
  return detail::weighted_null_space(p_matrix(dp), dp.marg_t(), dp.marg_s());
}

inline Eigen::MatrixXd null_space_p_star(const DiscreteProblem& dp) {
  return detail::weighted_null_space(p_star_matrix(dp), dp.marg_s(), dp.marg_t());
}

// Minimum-norm solution of P*P xi = alpha. theta* is strongly identified on
// this problem iff the residual vanishes.
struct Xi0Solution {
  Eigen::VectorXd xi0;
  bool feasible = false;
  double residual = 0.0;
};

inline Xi0Solution solve_xi0(const DiscreteProblem& dp) {
  dp.validate();
  const Eigen::MatrixXd a = p_star_matrix(dp) * p_matrix(dp);
  const auto res = detail::weighted_lstsq(a, riesz_alpha(dp), dp.marg_s(), dp.marg_s());
  Xi0Solution out;
  out.xi0 = res.x;
  out.residual = res.residual_norm;
  out.feasible = res.residual_norm < 1e-8;
  return out;
}

// Minimum-norm solution of P h = r0 (one primary nuisance among many).
struct H0Solution {
  Eigen::VectorXd h0;
  bool feasible = false;
  double residual = 0.0;
};

inline H0Solution solve_h0(const DiscreteProblem& dp) {
  dp.validate();
  const auto res = detail::weighted_lstsq(p_matrix(dp), r0_vector(dp), dp.marg_t(), dp.marg_s());
  H0Solution out;
  out.h0 = res.x;
  out.residual = res.residual_norm;
  out.feasible = res.residual_norm < 1e-8;
  return out;
}

// q_dagger = P xi0, the minimum-norm element of Q0 = {q : P*q = alpha}.
// Verifies minimality against randomly sampled Q0 elements before returning.
inline Eigen::VectorXd q_dagger(const DiscreteProblem& dp, const Xi0Solution& xi0) {
  if (!xi0.feasible) throw std::invalid_argument("q_dagger: xi0 infeasible");
  const Eigen::VectorXd qd = p_matrix(dp) * xi0.xi0;
  const Eigen::MatrixXd nul = null_space_p_star(dp);
  const double qd_norm = std::sqrt(inner_t(dp, qd, qd));
  if (nul.cols() > 0) {
    Rng rng(0x71646167ull);
    for (int rep = 0; rep < 20; ++rep) {
      const Eigen::VectorXd q0 = qd + nul * rng.normal_vector(nul.cols());
      if (qd_norm > std::sqrt(inner_t(dp, q0, q0)) + 1e-10)
        throw SolverError("q_dagger: minimum-norm check failed");
    }
  }
  return qd;
}

// Exact population mean of psi(W; h, q) for h on s_support and q on t_support.
inline double population_psi_mean(const DiscreteProblem& dp, const Eigen::VectorXd& h,
                                  const Eigen::VectorXd& q) {
  double acc = dp.m_weights.dot(h);
  for (Eigen::Index s = 0; s < dp.m_s(); ++s)
    for (Eigen::Index t = 0; t < dp.m_t(); ++t)
      acc += dp.pmf(s, t) * q(t) * (dp.g2_table(s, t) - dp.g1_table(s, t) * h(s));
  return acc;
}

// theta* = E[m(W; h0)], cross-checked against E[q_dagger(T) g2(W)].
inline double theta_star(const DiscreteProblem& dp) {
  const auto h0 = solve_h0(dp);
  if (!h0.feasible)
    throw SolverError("theta_star: moment equation P h = r0 has no solution");
  const double theta = dp.m_weights.dot(h0.h0);
  const auto xi0 = solve_xi0(dp);
  if (!xi0.feasible)
    throw SolverError("theta_star: alpha outside R(P*P), not strongly identified");
  const Eigen::VectorXd qd = q_dagger(dp, xi0);
  const double via_q = inner_t(dp, qd, r0_vector(dp));
  if (std::abs(theta - via_q) > 1e-10 * (1.0 + std::abs(theta)))
    throw SolverError("theta_star: identification formulas disagree");
  return theta;
}

// The mixed-bias identity, both sides:
//   lhs = E[psi(W; h, P xi)] - theta*
//   rhs = <P(h - h0), P(xi0 - xi)>_T.
// The bias is the product of the two projected nuisance errors; it vanishes
// whenever either factor does.
struct MixedBias {
  double lhs = 0.0;
  double rhs = 0.0;
};

inline MixedBias verify_mixed_bias(const DiscreteProblem& dp, const Eigen::VectorXd& h,
                                   const Eigen::VectorXd& xi) {
  const Eigen::MatrixXd p = p_matrix(dp);
  const auto h0 = solve_h0(dp);
  const auto xi0 = solve_xi0(dp);
  if (!h0.feasible || !xi0.feasible)
    throw std::invalid_argument("verify_mixed_bias: problem not strongly identified");
  const double theta = theta_star(dp);
  MixedBias out;
  out.lhs = population_psi_mean(dp, h, p * xi) - theta;
  out.rhs = inner_t(dp, p * (h - h0.h0), p * (xi0.xi0 - xi));
  return out;
}

// iid draws from the joint pmf; emits the sampled values together with the
// representer weight alpha(S_i) as aux column "m_alpha", so the sampled
// functional E_n[alpha(S) f(S)] targets E[m(W; f)].
inline Dataset sample_from(const DiscreteProblem& dp, Eigen::Index n, std::uint64_t seed) {
  dp.validate();
  if (n < 1) throw std::invalid_argument("sample_from: n must be positive");
  const Eigen::VectorXd alpha = riesz_alpha(dp);
  std::vector<double> cdf;
  cdf.reserve(dp.m_s() * dp.m_t());
  double acc = 0.0;
  for (Eigen::Index s = 0; s < dp.m_s(); ++s)
    for (Eigen::Index t = 0; t < dp.m_t(); ++t) {
      acc += dp.pmf(s, t);
      cdf.push_back(acc);
    }
  cdf.back() = 1.0;
  Rng rng(seed);
  Dataset d;
  d.s.resize(n, 1);
  d.t.resize(n, 1);
  d.g1.resize(n);
  d.g2.resize(n);
  Eigen::VectorXd aw(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = rng.uniform();
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    const Eigen::Index cell = it - cdf.begin();
    const Eigen::Index s = cell / dp.m_t();
    const Eigen::Index t = cell % dp.m_t();
    d.s(i, 0) = dp.s_support(s);
    d.t(i, 0) = dp.t_support(t);
    d.g1(i) = dp.g1_table(s, t);
    d.g2(i) = dp.g2_table(s, t);
    aw(i) = alpha(s);
  }
  d.aux["m_alpha"] = std::move(aw);
  return d;
}

inline MomentProblem make_sampled_problem(const DiscreteProblem& dp, Eigen::Index n,
                                          std::uint64_t seed) {
  return MomentProblem{sample_from(dp, n, seed), make_aux_weighted_eval("m_alpha")};
}

// ---------------------------------------------------------------------------
// Built-in example problems
// ---------------------------------------------------------------------------

// S = T almost surely, g1 = 1: P is the identity and the exogenous theory
// applies (Xi0 = {alpha}).
inline DiscreteProblem example_identity() {
  DiscreteProblem dp;
  dp.s_support.resize(3);
  dp.s_support << -1.0, 0.5, 2.0;
  dp.t_support = dp.s_support;
  dp.pmf = Eigen::MatrixXd::Zero(3, 3);
  dp.pmf.diagonal() << 0.3, 0.45, 0.25;
  dp.g1_table = Eigen::MatrixXd::Ones(3, 3);
  dp.g2_table.resize(3, 3);
  for (Eigen::Index s = 0; s < 3; ++s)
    dp.g2_table.row(s).setConstant(0.7 * dp.s_support(s) + 0.3);
  dp.m_weights = dp.marg_s();  // mean functional, alpha = 1
  dp.validate();
  return dp;
}

// Correlated 2x2 joint with S, T in {-1, 1}; P = [[.8, .2], [.2, .8]],
// alpha(s) = s, h0(s) = s, theta* = 1.
inline DiscreteProblem example_correlated_2x2() {
  DiscreteProblem dp;
  dp.s_support.resize(2);
  dp.s_support << -1.0, 1.0;
  dp.t_support = dp.s_support;
  dp.pmf.resize(2, 2);
  dp.pmf << 0.4, 0.1, 0.1, 0.4;
  dp.g1_table = Eigen::MatrixXd::Ones(2, 2);
  dp.g2_table.resize(2, 2);
  dp.g2_table << -1.0, -1.0, 1.0, 1.0;  // g2(s, t) = s
  dp.m_weights = (dp.marg_s().array() * dp.s_support.array()).matrix();  // alpha(s) = s
  dp.validate();
  return dp;
}

// Four S points against three T points, so P has a nontrivial null space and
// h0 is set-identified. g1 varies across cells. With feasible_alpha the
// representer is constructed inside R(P*P) from a reference direction;
// otherwise a null-space component is added, which breaks identifiability.
inline DiscreteProblem example_rank_deficient_4x3(bool feasible_alpha = true) {
  DiscreteProblem dp;
  dp.s_support.resize(4);
  dp.s_support << -1.5, -0.5, 0.5, 1.5;
  dp.t_support.resize(3);
  dp.t_support << -1.0, 0.0, 1.0;
  dp.pmf.resize(4, 3);
  dp.pmf << 0.10, 0.05, 0.03,
            0.07, 0.12, 0.06,
            0.05, 0.11, 0.09,
            0.04, 0.08, 0.20;
  dp.g1_table.resize(4, 3);
  for (Eigen::Index s = 0; s < 4; ++s)
    for (Eigen::Index t = 0; t < 3; ++t)
      dp.g1_table(s, t) = 0.8 + 0.2 * dp.s_support(s) * dp.t_support(t) / 1.5;
  // g2 = g1 * h_true so the moment equation is solvable by construction
  Eigen::VectorXd h_true(4);
  h_true << 0.5, -0.25, 1.0, 0.75;
  dp.g2_table.resize(4, 3);
  for (Eigen::Index s = 0; s < 4; ++s)
    for (Eigen::Index t = 0; t < 3; ++t) dp.g2_table(s, t) = dp.g1_table(s, t) * h_true(s);
  // alpha = P*P xi_ref lies in R(P*P) by construction
  Eigen::VectorXd xi_ref(4);
  xi_ref << 1.0, -0.5, 0.25, 0.8;
  dp.m_weights.setZero(4);  // placeholder so marginals are computable
  Eigen::VectorXd alpha = p_star_matrix(dp) * (p_matrix(dp) * xi_ref);
  if (!feasible_alpha) {
    const Eigen::MatrixXd nul = null_space_p(dp);
    if (nul.cols() < 1) throw std::logic_error("expected a rank-deficient operator");
    alpha += nul.col(0);
  }
  dp.m_weights = (dp.marg_s().array() * alpha.array()).matrix();
  dp.validate();
  return dp;
}

}  // namespace strongid::oracle
