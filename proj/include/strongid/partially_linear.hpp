#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "strongid/dataset.hpp"
#include "strongid/debiased.hpp"
#include "strongid/linalg.hpp"
#include "strongid/minimax.hpp"

namespace strongid::pl {

// Partially linear IV data: Y = theta' X_a + g(X_b) + noise with instruments
// Z, where only the coefficients on X_a are targets and g is a nonparametric
// nuisance.
struct PLDataset {
  Eigen::MatrixXd x_a;  // n x d_a
  Eigen::MatrixXd x_b;  // n x d_b
  Eigen::MatrixXd z;    // n x d_z
  Eigen::VectorXd y;

  Eigen::Index n() const { return x_a.rows(); }
  Eigen::Index d_a() const { return x_a.cols(); }
  Eigen::Index d_b() const { return x_b.cols(); }
  Eigen::Index d_z() const { return z.cols(); }

  Eigen::MatrixXd joined_x() const {
    Eigen::MatrixXd x(n(), d_a() + d_b());
    x << x_a, x_b;
    return x;
  }
};

inline std::vector<std::string> validate_pl_dataset(const PLDataset& d) {
  std::vector<std::string> out;
  if (d.d_a() < 1) out.push_back("X_a must have at least one column");
  if (d.n() < 2) out.push_back("need at least 2 observations");
  if (d.x_b.rows() != d.n()) out.push_back("length mismatch: X_b");
  if (d.z.rows() != d.n()) out.push_back("length mismatch: Z");
  if (d.y.size() != d.n()) out.push_back("length mismatch: Y");
  if (!d.x_a.allFinite() || !d.x_b.allFinite() || !d.z.allFinite() || !d.y.allFinite())
    out.push_back("non-finite entry");
  return out;
}

inline PLDataset subset_rows(const PLDataset& d, std::span<const Eigen::Index> rows) {
  PLDataset out;
  const Eigen::Index m = static_cast<Eigen::Index>(rows.size());
  out.x_a.resize(m, d.d_a());
  out.x_b.resize(m, d.d_b());
  out.z.resize(m, d.d_z());
  out.y.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    out.x_a.row(i) = d.x_a.row(rows[i]);
    out.x_b.row(i) = d.x_b.row(rows[i]);
    out.z.row(i) = d.z.row(rows[i]);
    out.y(i) = d.y(rows[i]);
  }
  return out;
}

// Sidecar roles: {"a": [...], "b": [...], "z": [...], "y": "col"}.
inline PLDataset load_pl_dataset_csv(const std::string& csv_path,
                                     const nlohmann::json& mapping) {
  const io::CsvTable t = io::read_csv(csv_path);
  PLDataset d;
  d.x_a = detail::pick_columns(t, mapping.at("a"));
  d.x_b = detail::pick_columns(t, mapping.at("b"));
  d.z = detail::pick_columns(t, mapping.at("z"));
  d.y = t.values.col(t.column(mapping.at("y").get<std::string>()));
  const auto errs = validate_pl_dataset(d);
  if (!errs.empty()) throw std::invalid_argument("invalid PL dataset: " + errs.front());
  return d;
}

struct PLEstimate {
  Eigen::VectorXd theta;
  Eigen::VectorXd se;
  std::vector<std::pair<double, double>> ci;
  double alpha = 0.05;
  FittedFunction g_hat;                 // on X_b
  std::vector<FittedFunction> q_hat;    // on Z, one per coordinate
  std::vector<FittedFunction> xi_hat;   // on X = [X_a | X_b], one per coordinate
};

namespace detail {

// Dictionary of the partially linear class on training data: the raw X_a
// coordinates followed by the basis of the g block. The ridge on the theta
// block replaces a class-norm penalty that the PL norm split does not define.
inline constexpr double kThetaRidge = 1e-8;

struct PLBasis {
  Basis basis;       // over joined X = [X_a | X_b]
  Eigen::Index d_a = 0;
  Eigen::Index p_g = 0;

  Eigen::MatrixXd regularizer(double gamma_g) const {
    Eigen::MatrixXd r = Eigen::MatrixXd::Zero(basis.p, basis.p);
    r.topLeftCorner(d_a, d_a) = kThetaRidge * Eigen::MatrixXd::Identity(d_a, d_a);
    r.bottomRightCorner(p_g, p_g) = gamma_g * basis.norm_gram.bottomRightCorner(p_g, p_g);
    return r;
  }
};

inline PLBasis make_pl_basis(const FunctionClassSpec& g_class, const Eigen::MatrixXd& x_b_train,
                             Eigen::Index d_a) {
  const Basis g_basis = make_basis(g_class, x_b_train);
  PLBasis out;
  out.d_a = d_a;
  out.p_g = g_basis.p;
  Basis& b = out.basis;
  b.p = d_a + g_basis.p;
  b.design = [d_a, g_basis](const Eigen::MatrixXd& x) {
    Eigen::MatrixXd cols(x.rows(), d_a + g_basis.p);
    cols.leftCols(d_a) = x.leftCols(d_a);
    cols.rightCols(g_basis.p) = g_basis.design(x.rightCols(x.cols() - d_a));
    return cols;
  };
  b.norm_gram = Eigen::MatrixXd::Zero(b.p, b.p);
  b.norm_gram.topLeftCorner(d_a, d_a).setIdentity();
  b.norm_gram.bottomRightCorner(g_basis.p, g_basis.p) = g_basis.norm_gram;
  b.package = [d_a, g_basis](const Eigen::VectorXd& c) {
    return FittedFunction::partially_linear(c.head(d_a), g_basis.package(c.tail(c.size() - d_a)));
  };
  return out;
}

inline MomentProblem pl_moment_problem(const PLDataset& d, const LinearFunctionalSpec& m) {
  Dataset data;
  data.s = d.joined_x();
  data.t = d.z;
  data.g1 = Eigen::VectorXd::Ones(d.n());
  data.g2 = d.y;
  return MomentProblem{std::move(data), m};
}

}  // namespace detail

struct PLPrimaryFit {
  Eigen::VectorXd theta_tilde;
  FittedFunction g_hat;  // on X_b
  FittedFunction h;      // full PL function on [X_a | X_b]
};

// Minimax fit of the partially linear IV regression over Z-instrumented test
// functions; theta_tilde are the leading coefficients. mu_n penalizes the
// whole fitted values, gamma_h only the g block.
inline PLPrimaryFit pl_estimate_h(const PLDataset& d, const FunctionClassSpec& g_class,
                                  const FunctionClassSpec& q_class, const PenaltyConfig& pen) {
  const auto errs = validate_pl_dataset(d);
  if (!errs.empty()) throw std::invalid_argument("pl_estimate_h: " + errs.front());
  pen.validate();
  const auto plb = detail::make_pl_basis(g_class, d.x_b, d.d_a());
  const MomentProblem p = detail::pl_moment_problem(d, make_mean_functional());
  const TestOperator omega(q_class, d.z, pen.gamma_q, pen.jitter_scale);
  const auto core = strongid::detail::assemble_core(plb.basis, p.data, omega);
  const Eigen::VectorXd c = strongid::detail::solve_h_coefficients(
      core, d.y, pen.mu_n, plb.regularizer(pen.gamma_h), pen.jitter_scale);
  PLPrimaryFit out;
  out.theta_tilde = c.head(d.d_a());
  out.h = plb.basis.package(c);
  const Eigen::VectorXd g_coef = c.tail(c.size() - d.d_a());
  out.g_hat = make_basis(g_class, d.x_b).package(g_coef);
  return out;
}

struct PLDebiasFit {
  std::vector<FittedFunction> xi_hat;  // on [X_a | X_b]
  std::vector<FittedFunction> q_hat;   // on Z
};

// Per-coordinate debiasing nuisances: xi_i solves the minimax problem with
// the coefficient-selector functional m_i(W; (theta, g)) = theta_i, and q_i
// is its ridge projection onto Z. The quadratic core is shared across
// coordinates; only the linear term changes.
inline PLDebiasFit pl_estimate_debias(const PLDataset& d, const FunctionClassSpec& xi_class,
                                      const FunctionClassSpec& q_class,
                                      const FunctionClassSpec& q_tilde_class,
                                      const PenaltyConfig& pen) {
  const auto errs = validate_pl_dataset(d);
  if (!errs.empty()) throw std::invalid_argument("pl_estimate_debias: " + errs.front());
  pen.validate();
  const auto plb = detail::make_pl_basis(xi_class, d.x_b, d.d_a());
  const MomentProblem p = detail::pl_moment_problem(d, make_mean_functional());
  const TestOperator omega(q_class, d.z, pen.gamma_q, pen.jitter_scale);
  const auto core = strongid::detail::assemble_core(plb.basis, p.data, omega);
  const Eigen::MatrixXd reg = plb.regularizer(pen.gamma_xi);
  PLDebiasFit out;
  for (Eigen::Index i = 0; i < d.d_a(); ++i) {
    const LinearFunctionalSpec m_i =
        make_coefficient_selector(static_cast<int>(i), static_cast<int>(d.d_a()));
    const Eigen::VectorXd mbar = m_i.dictionary_means(plb.basis.design, p.data);
    const Eigen::VectorXd c =
        strongid::detail::solve_xi_coefficients(core, mbar, reg, pen.jitter_scale);
    FittedFunction xi = plb.basis.package(c);
    const Eigen::VectorXd v = xi.evaluate(p.data.s);
    out.q_hat.push_back(
        project_q_values(v, d.z, q_tilde_class, pen.tilde_gamma_q, pen.jitter_scale));
    out.xi_hat.push_back(std::move(xi));
  }
  return out;
}

// theta_hat = theta_tilde + E_n[(Y - theta_tilde' X_a - g(X_b)) q(Z)] on the
// evaluation rows, with per-coordinate influence-function standard errors.
inline PLEstimate pl_debiased_theta(const PLDataset& d, const Eigen::VectorXd& theta_tilde,
                                    const FittedFunction& g_hat,
                                    const std::vector<FittedFunction>& q_hat,
                                    std::span<const Eigen::Index> eval_rows,
                                    double alpha = 0.05) {
  if (static_cast<Eigen::Index>(q_hat.size()) != d.d_a())
    throw std::invalid_argument("pl_debiased_theta: need one q per coordinate");
  if (theta_tilde.size() != d.d_a())
    throw std::invalid_argument("pl_debiased_theta: theta dimension mismatch");
  const PLDataset e = eval_rows.empty() ? d : subset_rows(d, eval_rows);
  const Eigen::VectorXd resid = e.y - e.x_a * theta_tilde - g_hat.evaluate(e.x_b);
  const double n = static_cast<double>(e.n());
  PLEstimate out;
  out.alpha = alpha;
  out.theta.resize(d.d_a());
  out.se.resize(d.d_a());
  const double z = linalg::normal_quantile(1.0 - alpha / 2.0);
  for (Eigen::Index i = 0; i < d.d_a(); ++i) {
    const Eigen::VectorXd qv = q_hat[static_cast<std::size_t>(i)].evaluate(e.z);
    const Eigen::VectorXd psi = theta_tilde(i) + (resid.array() * qv.array()).matrix().array();
    out.theta(i) = psi.mean();
    const double sigma2 = (psi.array() - out.theta(i)).square().mean();
    out.se(i) = std::sqrt(sigma2 / n);
    out.ci.emplace_back(out.theta(i) - z * out.se(i), out.theta(i) + z * out.se(i));
  }
  out.g_hat = g_hat;
  out.q_hat = q_hat;
  return out;
}

// Alternative debiasing construction: per-coordinate projected-distance fits
// rho_i of X_a^i on X_b against instruments Z, the instrumented covariance
// Gamma, and xi_tilde = Gamma^{-1} (X_a - rho(X_b)). Solutions may differ
// from the direct xi fit, but their projections onto Z agree.
struct ChenFit {
  std::vector<FittedFunction> xi_tilde;  // on [X_a | X_b]
  std::vector<FittedFunction> rho;       // on X_b
  Eigen::MatrixXd gamma;                 // d_a x d_a
};

inline ChenFit chen_alternative_xi(const PLDataset& d, const FunctionClassSpec& rho_class,
                                   const FunctionClassSpec& q_class, const PenaltyConfig& pen) {
  const auto errs = validate_pl_dataset(d);
  if (!errs.empty()) throw std::invalid_argument("chen_alternative_xi: " + errs.front());
  pen.validate();
  const Basis rho_basis = make_basis(rho_class, d.x_b);
  Dataset data;
  data.s = d.x_b;
  data.t = d.z;
  data.g1 = Eigen::VectorXd::Ones(d.n());
  data.g2 = Eigen::VectorXd::Zero(d.n());
  const TestOperator omega(q_class, d.z, pen.gamma_q, pen.jitter_scale);
  const auto core = strongid::detail::assemble_core(rho_basis, data, omega);
  const Eigen::MatrixXd reg = pen.gamma_h * rho_basis.norm_gram;

  ChenFit out;
  const Eigen::Index da = d.d_a();
  Eigen::MatrixXd qbar(d.n(), da);  // fitted projections of X_a - rho(X_b) onto Z
  for (Eigen::Index i = 0; i < da; ++i) {
    // projected-distance problem: minimax fit of rho to X_a^i with mu_n = 0
    const Eigen::VectorXd c = strongid::detail::solve_h_coefficients(
        core, d.x_a.col(i), /*mu_n=*/0.0, reg, pen.jitter_scale);
    FittedFunction rho_i = rho_basis.package(c);
    const Eigen::VectorXd v = d.x_a.col(i) - rho_i.evaluate(d.x_b);
    const FittedFunction proj =
        project_q_values(v, d.z, q_class, pen.tilde_gamma_q, pen.jitter_scale);
    qbar.col(i) = proj.evaluate(d.z);
    out.rho.push_back(std::move(rho_i));
  }
  out.gamma = qbar.transpose() * qbar / static_cast<double>(d.n());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(out.gamma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(sv.size() - 1) <= 0.0 || sv(0) / sv(sv.size() - 1) > 1e8)
    throw SolverError("chen_alternative_xi: Gamma singular, instruments carry no signal");
  const Eigen::MatrixXd gamma_inv = svd.solve(Eigen::MatrixXd::Identity(da, da));
  for (Eigen::Index i = 0; i < da; ++i) {
    // xi_tilde_i = sum_j inv_ij (X_a^j - rho_j(X_b)) as a PL function
    FittedFunction g = out.rho[0].scaled(-gamma_inv(i, 0));
    for (Eigen::Index j = 1; j < da; ++j)
      g = g.plus_scaled(-gamma_inv(i, j), out.rho[static_cast<std::size_t>(j)]);
    out.xi_tilde.push_back(
        FittedFunction::partially_linear(gamma_inv.row(i).transpose(), std::move(g)));
  }
  return out;
}

struct QMomentDiagnostics {
  double zero_given_xb = 0.0;  // RMS of the regression of q_hat(Z) on X_b features
  double identity_gap = 0.0;   // |E_n[q_hat(Z) X_a'] - I|_F
};

inline QMomentDiagnostics check_q_moments(const std::vector<FittedFunction>& q_hat,
                                          const PLDataset& d,
                                          const FunctionClassSpec& b_class) {
  if (static_cast<Eigen::Index>(q_hat.size()) != d.d_a())
    throw std::invalid_argument("check_q_moments: need one q per coordinate");
  const double n = static_cast<double>(d.n());
  const Eigen::Index da = d.d_a();
  QMomentDiagnostics out;
  Eigen::MatrixXd qv(d.n(), da);
  double sq = 0.0;
  for (Eigen::Index i = 0; i < da; ++i) {
    qv.col(i) = q_hat[static_cast<std::size_t>(i)].evaluate(d.z);
    const FittedFunction fit = project_q_values(qv.col(i), d.x_b, b_class, 1e-6);
    sq += fit.evaluate(d.x_b).squaredNorm();
  }
  out.zero_given_xb = std::sqrt(sq / (n * static_cast<double>(da)));
  const Eigen::MatrixXd cross = qv.transpose() * d.x_a / n;
  out.identity_gap = (cross - Eigen::MatrixXd::Identity(da, da)).norm();
  return out;
}

// Simple-split pipeline: all nuisances on one half, the debiased coefficient
// and its standard error on the other.
struct PLConfig {
  FunctionClassSpec g_class = FunctionClassSpec::linear_sieve(3, true, 1);
  FunctionClassSpec xi_class = FunctionClassSpec::linear_sieve(3, true, 1);
  FunctionClassSpec q_class = FunctionClassSpec::linear_sieve(3, true, 1);
  FunctionClassSpec q_tilde_class = FunctionClassSpec::linear_sieve(3, true, 1);
  std::optional<PenaltyConfig> penalties;
  std::uint64_t seed = 0;
  double alpha = 0.05;
};

inline PLEstimate pl_simple_split_estimate(const PLDataset& d, const PLConfig& cfg) {
  const auto folds = strongid::detail::make_folds(d.n(), 2, cfg.seed);
  const PLDataset train = subset_rows(d, folds[0]);
  const PenaltyConfig pen =
      cfg.penalties ? *cfg.penalties : PenaltyConfig::defaults_for(train.n());
  const auto primary = pl_estimate_h(train, cfg.g_class, cfg.q_class, pen);
  const auto debias =
      pl_estimate_debias(train, cfg.xi_class, cfg.q_class, cfg.q_tilde_class, pen);
  PLEstimate est = pl_debiased_theta(d, primary.theta_tilde, primary.g_hat, debias.q_hat,
                                     folds[1], cfg.alpha);
  est.xi_hat = debias.xi_hat;
  return est;
}

}  // namespace strongid::pl
