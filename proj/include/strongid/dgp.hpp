#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "strongid/dataset.hpp"
#include "strongid/partially_linear.hpp"
#include "strongid/rng.hpp"

namespace strongid::dgp {

enum class H0Kind { kAbs, kTwoDPoly, kSigmoid, kSin, kLinear };

inline const char* h0_name(H0Kind k) {
  switch (k) {
    case H0Kind::kAbs: return "abs";
    case H0Kind::kTwoDPoly: return "2dpoly";
    case H0Kind::kSigmoid: return "sigmoid";
    case H0Kind::kSin: return "sin";
    case H0Kind::kLinear: return "linear";
  }
  return "?";
}

inline H0Kind h0_from_name(const std::string& s) {
  if (s == "abs") return H0Kind::kAbs;
  if (s == "2dpoly") return H0Kind::kTwoDPoly;
  if (s == "sigmoid") return H0Kind::kSigmoid;
  if (s == "sin") return H0Kind::kSin;
  if (s == "linear") return H0Kind::kLinear;
  throw std::invalid_argument("unknown h0 kind '" + s + "'");
}

inline double h0_eval(H0Kind kind, double s) {
  switch (kind) {
    case H0Kind::kAbs: return std::abs(s);
    case H0Kind::kTwoDPoly: return -1.5 * s + 0.9 * s * s;
    case H0Kind::kSigmoid: return 2.0 / (1.0 + std::exp(-2.0 * s));
    case H0Kind::kSin: return std::sin(s);
    case H0Kind::kLinear: return s;  // test-only: constant difference quotient
  }
  throw std::logic_error("h0_eval: bad kind");
}

inline std::string h0_formula(H0Kind kind) {
  switch (kind) {
    case H0Kind::kAbs: return "|s|";
    case H0Kind::kTwoDPoly: return "-1.5*s + 0.9*s^2";
    case H0Kind::kSigmoid: return "2/(1+exp(-2*s))";
    case H0Kind::kSin: return "sin(s)";
    case H0Kind::kLinear: return "s";
  }
  return "?";
}

// Instrument T, confounder U, treatment S = rho T + (1-rho) U + zeta,
// outcome y = h0(S) + U + nu. The target functional is the average finite
// difference of h with step eps.
struct DgpConfig {
  double rho = 0.5;
  double sigma_t = 2.0;
  double sigma_u = 2.0;
  double zeta_sd = 0.1;
  double nu_sd = 0.1;
  H0Kind h0_kind = H0Kind::kSin;
  double eps = 0.1;
  Eigen::Index n = 1000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("rho must be in (0, 1]");
    if (!(sigma_t > 0 && sigma_u > 0 && zeta_sd > 0 && nu_sd > 0 && eps > 0))
      throw std::invalid_argument("scale parameters must be positive");
    if (n < 2) throw std::invalid_argument("n must be at least 2");
  }
};

inline Dataset sample(const DgpConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const Eigen::VectorXd t = cfg.sigma_t * rng.normal_vector(cfg.n);
  const Eigen::VectorXd u = cfg.sigma_u * rng.normal_vector(cfg.n);
  const Eigen::VectorXd zeta = cfg.zeta_sd * rng.normal_vector(cfg.n);
  const Eigen::VectorXd nu = cfg.nu_sd * rng.normal_vector(cfg.n);
  Dataset d;
  d.t = t;
  d.s = (cfg.rho * t + (1.0 - cfg.rho) * u + zeta).eval();
  d.g1 = Eigen::VectorXd::Ones(cfg.n);
  d.g2.resize(cfg.n);
  for (Eigen::Index i = 0; i < cfg.n; ++i)
    d.g2(i) = h0_eval(cfg.h0_kind, d.s(i, 0)) + u(i) + nu(i);
  return d;
}

inline MomentProblem make_problem(const DgpConfig& cfg) {
  return MomentProblem{sample(cfg), make_avg_finite_difference(cfg.eps)};
}

// Closed forms implied by the Gaussian design: the average-derivative
// representer a0(s) = s / Var(S), the instrumented projection q0(t) =
// t / (rho sigma_T^2), and the debiasing direction xi0(s) = s / (rho^2
// sigma_T^2). Var(S) is the actual treatment variance, not sigma_u^2.
struct OracleNuisances {
  double a0_slope = 0.0;
  double q0_slope = 0.0;
  double xi0_slope = 0.0;
  double var_s = 0.0;
};

inline double var_s(const DgpConfig& cfg) {
  return cfg.rho * cfg.rho * cfg.sigma_t * cfg.sigma_t +
         (1.0 - cfg.rho) * (1.0 - cfg.rho) * cfg.sigma_u * cfg.sigma_u +
         cfg.zeta_sd * cfg.zeta_sd;
}

inline OracleNuisances oracle_nuisances(const DgpConfig& cfg) {
  cfg.validate();
  OracleNuisances o;
  o.var_s = var_s(cfg);
  o.a0_slope = 1.0 / o.var_s;
  o.q0_slope = 1.0 / (cfg.rho * cfg.sigma_t * cfg.sigma_t);
  o.xi0_slope = 1.0 / (cfg.rho * cfg.rho * cfg.sigma_t * cfg.sigma_t);
  return o;
}

// Monte Carlo ground truth theta* = E[(h0(S+eps) - h0(S-eps)) / (2 eps)]
// over fresh draws of S, with its own MC standard error.
struct OracleTheta {
  double value = 0.0;
  double mc_se = 0.0;
};

inline OracleTheta oracle_theta(const DgpConfig& cfg, Eigen::Index n_mc, std::uint64_t seed) {
  cfg.validate();
  if (n_mc < 2) throw std::invalid_argument("oracle_theta: n_mc too small");
  const double sd = std::sqrt(var_s(cfg));
  Rng rng(seed);
  double sum = 0.0, sumsq = 0.0;
  for (Eigen::Index i = 0; i < n_mc; ++i) {
    const double s = sd * rng.normal();
    const double v =
        (h0_eval(cfg.h0_kind, s + cfg.eps) - h0_eval(cfg.h0_kind, s - cfg.eps)) / (2.0 * cfg.eps);
    sum += v;
    sumsq += v * v;
  }
  OracleTheta out;
  const double nd = static_cast<double>(n_mc);
  out.value = sum / nd;
  out.mc_se = std::sqrt((sumsq / nd - out.value * out.value) / nd);
  return out;
}

// Two stage least squares without intercept: theta = sum T_i y_i / sum T_i S_i.
inline double tsls(const Dataset& d) {
  if (d.d_s() != 1 || d.d_t() != 1) throw std::invalid_argument("tsls: scalar S and T only");
  const double den = d.t.col(0).dot(d.s.col(0));
  const double scale = d.t.col(0).norm() * d.s.col(0).norm();
  if (std::abs(den) < 1e-12 * (1.0 + scale)) throw std::invalid_argument("tsls: T'S is zero");
  return d.t.col(0).dot(d.g2) / den;
}

// ---------------------------------------------------------------------------
// Gaussian partially linear IV test process
// ---------------------------------------------------------------------------

enum class PLGKind { kZero, kLinear, kSmooth };

// X_a^j = kappa Z_j + c_b X_b + c_u U + eta_j,   Z ~ N(0, I), X_b ~ N(0,1)
// Y = theta*' X_a + g(X_b) + c_u U + nu
// Since Z is independent of X_b, the debiasing closed forms are
//   rho0 = any mean-zero function (0 is the minimum-norm choice),
//   Gamma = kappa^2 I,  q_dagger(Z) = Z / kappa.
struct PLDgpConfig {
  Eigen::Index n = 2000;
  std::uint64_t seed = 0;
  Eigen::VectorXd theta_star = Eigen::VectorXd::Ones(1);
  double instrument_strength = 0.7;  // kappa
  PLGKind g_kind = PLGKind::kSmooth;
  double xb_coef = 0.3;      // c_b
  double confounding = 0.5;  // c_u
  double eta_sd = 0.5;
  double nu_sd = 0.5;

  void validate() const {
    if (!(instrument_strength > 0.0 && instrument_strength <= 1.0))
      throw std::invalid_argument("instrument_strength must be in (0, 1]");
    if (theta_star.size() < 1) throw std::invalid_argument("theta_star must be nonempty");
    if (n < 2) throw std::invalid_argument("n must be at least 2");
  }
};

inline double pl_g_eval(PLGKind kind, double x) {
  switch (kind) {
    case PLGKind::kZero: return 0.0;
    case PLGKind::kLinear: return 0.5 * x;
    case PLGKind::kSmooth: return std::cos(x) + 0.5 * x;
  }
  throw std::logic_error("pl_g_eval: bad kind");
}

inline pl::PLDataset pl_sample(const PLDgpConfig& cfg) {
  cfg.validate();
  const Eigen::Index da = cfg.theta_star.size();
  Rng rng(cfg.seed);
  const Eigen::MatrixXd z = rng.normal_matrix(cfg.n, da);
  const Eigen::VectorXd xb = rng.normal_vector(cfg.n);
  const Eigen::VectorXd u = rng.normal_vector(cfg.n);
  const Eigen::MatrixXd eta = cfg.eta_sd * rng.normal_matrix(cfg.n, da);
  const Eigen::VectorXd nu = cfg.nu_sd * rng.normal_vector(cfg.n);
  pl::PLDataset d;
  d.z = z;
  d.x_b = xb;
  d.x_a = cfg.instrument_strength * z + eta;
  d.x_a.colwise() += cfg.xb_coef * xb + cfg.confounding * u;
  d.y.resize(cfg.n);
  for (Eigen::Index i = 0; i < cfg.n; ++i)
    d.y(i) = cfg.theta_star.dot(d.x_a.row(i)) + pl_g_eval(cfg.g_kind, xb(i)) +
             cfg.confounding * u(i) + nu(i);
  return d;
}

inline pl::PLDataset pl_sample(Eigen::Index n, std::uint64_t seed,
                               const Eigen::VectorXd& theta_star, double instrument_strength) {
  PLDgpConfig cfg;
  cfg.n = n;
  cfg.seed = seed;
  cfg.theta_star = theta_star;
  cfg.instrument_strength = instrument_strength;
  return pl_sample(cfg);
}

struct PLAnalytic {
  Eigen::MatrixXd gamma;      // kappa^2 I
  double q_dagger_slope = 0;  // q_i(Z) = Z_i / kappa
};

inline PLAnalytic pl_analytic(const PLDgpConfig& cfg) {
  PLAnalytic out;
  const double k = cfg.instrument_strength;
  out.gamma =
      k * k * Eigen::MatrixXd::Identity(cfg.theta_star.size(), cfg.theta_star.size());
  out.q_dagger_slope = 1.0 / k;
  return out;
}

}  // namespace strongid::dgp
