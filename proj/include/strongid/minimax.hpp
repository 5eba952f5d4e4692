#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <utility>

#include <Eigen/Dense>

#include "strongid/dataset.hpp"
#include "strongid/function_space.hpp"
#include "strongid/linalg.hpp"

namespace strongid {

// Regularization weights for the penalized minimax problems. mu_n multiplies
// the empirical second moment of h inside the minimax objective; gamma_* are
// the class-norm penalties on the adversary q, the primary nuisance h, the
// debiasing direction xi, and the final q projection.
struct PenaltyConfig {
  double mu_n = 0.0;
  double gamma_q = 0.0;
  double gamma_h = 0.0;
  double gamma_xi = 0.0;
  double tilde_gamma_q = 0.0;
  double jitter_scale = 1e-10;

  // The paper fixes only order conditions; these constants are engineering
  // defaults (mu_n one order above the class penalties, both vanishing).
  static PenaltyConfig defaults_for(Eigen::Index n) {
    PenaltyConfig p;
    const double rate = std::pow(static_cast<double>(n), -0.9);
    p.mu_n = 0.1 * rate;
    p.gamma_q = p.gamma_h = p.gamma_xi = p.tilde_gamma_q = 0.01 * rate;
    return p;
  }

  void validate() const {
    if (mu_n < 0 || gamma_q < 0 || gamma_h < 0 || gamma_xi < 0 || tilde_gamma_q < 0 ||
        jitter_scale < 0)
      throw std::invalid_argument("penalties must be nonnegative");
  }
};

// ---------------------------------------------------------------------------
// Fitted basis of a function class on a training sample
// ---------------------------------------------------------------------------

// A function class instantiated on training data: column dictionary, the Gram
// matrix of its class norm (identity for sieves, kernel matrix for RKHS
// expansions anchored at the training rows), and a packer from coefficients
// back to a FittedFunction.
struct Basis {
  DesignFn design;
  Eigen::MatrixXd norm_gram;
  Eigen::Index p = 0;
  std::function<FittedFunction(const Eigen::VectorXd&)> package;
};

inline Basis make_basis(const FunctionClassSpec& spec, const Eigen::MatrixXd& x_train) {
  Basis b;
  if (spec.kind == FunctionClassSpec::kLinearSieve) {
    LinearSieveSpec s = spec.sieve;
    s.input_dim = static_cast<int>(x_train.cols());
    b.p = sieve_feature_count(s);
    if (b.p == 0) throw std::invalid_argument("empty sieve basis (degree 0, no intercept)");
    b.design = [s](const Eigen::MatrixXd& x) { return features(s, x); };
    b.norm_gram = Eigen::MatrixXd::Identity(b.p, b.p);
    b.package = [s](const Eigen::VectorXd& c) { return FittedFunction::from_features(s, c); };
  } else {
    const GaussianRkhsSpec s = resolve_bandwidth(spec.rkhs, x_train);
    Eigen::MatrixXd anchors = x_train;
    b.p = anchors.rows();
    b.design = [s, anchors](const Eigen::MatrixXd& x) { return gram(s, x, anchors); };
    b.norm_gram = gram(s, anchors, anchors);
    b.package = [s, anchors](const Eigen::VectorXd& c) {
      return FittedFunction::from_kernel(s, anchors, c);
    };
  }
  return b;
}

// ---------------------------------------------------------------------------
// Test operator: closed form of the penalized inner maximization
// ---------------------------------------------------------------------------

// For residual vector u, sup_q { E_n[u q] - 1/2 E_n[q^2] - gamma_q |q|_Q^2 }
// over the test class equals u' Omega u / (2n) with
//   Omega = K (K + 2 n gamma_q I)^-1            (RKHS, K the Gram at T)
//   Omega = Psi (Psi'Psi + 2 n gamma_q I)^-1 Psi'   (sieve features Psi).
// Omega is symmetric PSD with eigenvalues in [0, 1) whenever gamma_q > 0.
// Systems are solved, never inverted.
class TestOperator {
 public:
  TestOperator(const FunctionClassSpec& q_class, const Eigen::MatrixXd& t_data, double gamma_q,
               double jitter_scale)
      : n_(t_data.rows()), gamma_q_(gamma_q) {
    if (gamma_q < 0) throw std::invalid_argument("gamma_q must be nonnegative");
    if (q_class.kind == FunctionClassSpec::kGaussianRkhs) {
      kernel_ = true;
      rkhs_ = resolve_bandwidth(q_class.rkhs, t_data);
      anchors_ = t_data;
      k_ = gram(rkhs_, t_data, t_data);
      Eigen::MatrixXd a = k_;
      a.diagonal().array() += 2.0 * static_cast<double>(n_) * gamma_q;
      solver_.emplace(a, jitter_scale);
    } else {
      kernel_ = false;
      sieve_ = q_class.sieve;
      sieve_.input_dim = static_cast<int>(t_data.cols());
      psi_ = features(sieve_, t_data);
      Eigen::MatrixXd g = psi_.transpose() * psi_;
      g.diagonal().array() += 2.0 * static_cast<double>(n_) * gamma_q;
      solver_.emplace(g, jitter_scale);
    }
  }

  Eigen::Index n() const { return n_; }

  // Omega * U
  Eigen::MatrixXd apply(const Eigen::MatrixXd& u) const {
    if (u.rows() != n_) throw std::invalid_argument("test operator: row mismatch");
    if (kernel_) return k_ * solver_->solve(u);
    return psi_ * solver_->solve((psi_.transpose() * u).eval());
  }

  // Optimal value of the penalized inner maximization at residual u.
  double value(const Eigen::VectorXd& u) const {
    return u.dot(apply(u).col(0)) / (2.0 * static_cast<double>(n_));
  }

  // Coefficients of the maximizing q in the class parameterization:
  // (K + 2n gamma_q I) beta = u for RKHS, (Psi'Psi + 2n gamma_q I) b = Psi'u
  // for the sieve. Fitted values of the maximizer are apply(u).
  Eigen::VectorXd max_coefficients(const Eigen::VectorXd& u) const {
    if (kernel_) return solver_->solve(u);
    return solver_->solve((psi_.transpose() * u).eval());
  }

  FittedFunction max_function(const Eigen::VectorXd& u) const {
    const Eigen::VectorXd beta = max_coefficients(u);
    if (kernel_) return FittedFunction::from_kernel(rkhs_, anchors_, beta);
    return FittedFunction::from_features(sieve_, beta);
  }

  // Dense Omega, for small-n diagnostics only.
  Eigen::MatrixXd materialize() const {
    return apply(Eigen::MatrixXd::Identity(n_, n_));
  }

 private:
  Eigen::Index n_;
  double gamma_q_;
  bool kernel_ = false;
  GaussianRkhsSpec rkhs_;
  LinearSieveSpec sieve_;
  Eigen::MatrixXd anchors_;
  Eigen::MatrixXd k_;    // kernel Gram at T
  Eigen::MatrixXd psi_;  // sieve features at T
  std::optional<linalg::SymSolver> solver_;
};

inline TestOperator build_test_operator(const FunctionClassSpec& q_class,
                                        const Eigen::MatrixXd& t_data, double gamma_q,
                                        double jitter_scale = 1e-10) {
  return TestOperator(q_class, t_data, gamma_q, jitter_scale);
}

// ---------------------------------------------------------------------------
// Outer quadratic problems
// ---------------------------------------------------------------------------

namespace detail {

// Shared pieces of the outer problems in h and xi: with B the dictionary of
// the hypothesis class at the training S rows and D = diag(g1),
//   core = B'D Omega D B,  btb = B'B,  omega_db = Omega D B.
struct QuadraticCore {
  Eigen::MatrixXd b;
  Eigen::MatrixXd db;
  Eigen::MatrixXd omega_db;
  Eigen::MatrixXd core;
  Eigen::MatrixXd btb;
};

inline QuadraticCore assemble_core(const Basis& basis, const Dataset& d,
                                   const TestOperator& omega) {
  QuadraticCore q;
  q.b = basis.design(d.s);
  q.db = d.g1.asDiagonal() * q.b;
  q.omega_db = omega.apply(q.db);
  q.core = q.db.transpose() * q.omega_db;
  q.core = 0.5 * (q.core + q.core.transpose()).eval();
  q.btb = q.b.transpose() * q.b;
  return q;
}

// Solves the jittered symmetric system M c = rhs with one step of iterative
// refinement, and enforces the first-order-condition contract.
inline Eigen::VectorXd solve_foc(Eigen::MatrixXd m, const Eigen::VectorXd& rhs,
                                 double jitter_scale, const char* what) {
  m.diagonal().array() += linalg::jitter_amount(m, jitter_scale);
  linalg::SymSolver solver(m, 0.0);
  Eigen::VectorXd c = solver.solve(rhs);
  c += solver.solve((rhs - m * c).eval());
  const double res = (m * c - rhs).norm();
  if (res > 1e-6 * rhs.norm() + 1e-12)
    throw SolverError(std::string(what) + ": singular system (FOC residual " +
                      std::to_string(res) + ")");
  return c;
}

// Penalized minimax fit of h given an assembled core. reg is the full
// quadratic regularizer on coefficients (class-norm penalties included), so
// the normal equations are [core + 2 mu_n btb + 2n reg] c = B'D Omega g2.
inline Eigen::VectorXd solve_h_coefficients(const QuadraticCore& q, const Eigen::VectorXd& g2,
                                            double mu_n, const Eigen::MatrixXd& reg,
                                            double jitter_scale) {
  const double n = static_cast<double>(q.b.rows());
  Eigen::MatrixXd m = q.core + 2.0 * mu_n * q.btb + 2.0 * n * reg;
  const Eigen::VectorXd rhs = q.omega_db.transpose() * g2;
  return solve_foc(std::move(m), rhs, jitter_scale, "estimate_h");
}

// Same quadratic subject to the exact linear constraint
// E_n[qdag(T) (g2 - g1 h(S))] = 0, via block elimination of the single
// Lagrange multiplier. qdag_vals are qdag(T_i) on the training rows.
inline Eigen::VectorXd solve_h_coefficients_constrained(const QuadraticCore& q,
                                                        const Eigen::VectorXd& g2, double mu_n,
                                                        const Eigen::MatrixXd& reg,
                                                        const Eigen::VectorXd& qdag_vals,
                                                        double jitter_scale) {
  const Eigen::VectorXd a = q.db.transpose() * qdag_vals;
  const double b0 = qdag_vals.dot(g2);
  if (a.norm() == 0.0 && b0 == 0.0)
    return solve_h_coefficients(q, g2, mu_n, reg, jitter_scale);  // vacuous constraint
  const double n = static_cast<double>(q.b.rows());
  Eigen::MatrixXd m = q.core + 2.0 * mu_n * q.btb + 2.0 * n * reg;
  m.diagonal().array() += linalg::jitter_amount(m, jitter_scale);
  linalg::SymSolver solver(m, 0.0);
  const Eigen::VectorXd rhs = q.omega_db.transpose() * g2;
  Eigen::VectorXd c0 = solver.solve(rhs);
  c0 += solver.solve((rhs - m * c0).eval());
  Eigen::VectorXd dir = solver.solve(a);
  dir += solver.solve((a - m * dir).eval());
  const double denom = a.dot(dir);
  if (std::abs(denom) < 1e-14 * (1.0 + a.squaredNorm()))
    throw SolverError("estimate_h_clever: constraint direction degenerate");
  const double lambda = (b0 - a.dot(c0)) / denom;
  return c0 + lambda * dir;
}

// Debiasing-direction fit: [core + 2n reg] c = n m_bar.
inline Eigen::VectorXd solve_xi_coefficients(const QuadraticCore& q, const Eigen::VectorXd& mbar,
                                             const Eigen::MatrixXd& reg, double jitter_scale) {
  const double n = static_cast<double>(q.b.rows());
  Eigen::MatrixXd m = q.core + 2.0 * n * reg;
  const Eigen::VectorXd rhs = n * mbar;
  return solve_foc(std::move(m), rhs, jitter_scale, "estimate_xi");
}

}  // namespace detail

// argmin_h sup_q E_n[(g1 h - g2) q - q^2/2 + mu_n h^2] - gamma_q |q|_Q^2
//                                                      + gamma_h |h|_H^2
inline FittedFunction estimate_h(const MomentProblem& p, const FunctionClassSpec& h_class,
                                 const FunctionClassSpec& q_class, const PenaltyConfig& pen) {
  pen.validate();
  validate_problem(p);
  const Basis basis = make_basis(h_class, p.data.s);
  const TestOperator omega(q_class, p.data.t, pen.gamma_q, pen.jitter_scale);
  const auto core = detail::assemble_core(basis, p.data, omega);
  const Eigen::MatrixXd reg = pen.gamma_h * basis.norm_gram;
  return basis.package(
      detail::solve_h_coefficients(core, p.data.g2, pen.mu_n, reg, pen.jitter_scale));
}

// argmin_xi sup_q E_n[g1 xi q - q^2/2 - m(W; xi)] - gamma_q |q|_Q^2
//                                                 + gamma_xi |xi|_Xi^2
inline FittedFunction estimate_xi(const MomentProblem& p, const FunctionClassSpec& xi_class,
                                  const FunctionClassSpec& q_class, const PenaltyConfig& pen) {
  pen.validate();
  validate_problem(p);
  const Basis basis = make_basis(xi_class, p.data.s);
  const TestOperator omega(q_class, p.data.t, pen.gamma_q, pen.jitter_scale);
  const auto core = detail::assemble_core(basis, p.data, omega);
  const Eigen::VectorXd mbar = p.functional.dictionary_means
                                   ? p.functional.dictionary_means(basis.design, p.data)
                                   : detail::generic_dictionary_means(p.functional.eval_all)(
                                         basis.design, p.data);
  const Eigen::MatrixXd reg = pen.gamma_xi * basis.norm_gram;
  return basis.package(detail::solve_xi_coefficients(core, mbar, reg, pen.jitter_scale));
}

// Ridge / kernel-ridge projection of v_i = g1_i xi(S_i) onto functions of T:
// argmin_q E_n[(g1 xi - q)^2] + tilde_gamma_q |q|^2.
inline FittedFunction project_q_values(const Eigen::VectorXd& v, const Eigen::MatrixXd& t_data,
                                       const FunctionClassSpec& q_class, double tilde_gamma_q,
                                       double jitter_scale = 1e-10) {
  if (tilde_gamma_q < 0) throw std::invalid_argument("tilde_gamma_q must be nonnegative");
  const double n = static_cast<double>(t_data.rows());
  if (q_class.kind == FunctionClassSpec::kGaussianRkhs) {
    const GaussianRkhsSpec spec = resolve_bandwidth(q_class.rkhs, t_data);
    Eigen::MatrixXd a = gram(spec, t_data, t_data);
    a.diagonal().array() += n * tilde_gamma_q;
    a.diagonal().array() += linalg::jitter_amount(a, jitter_scale);
    return FittedFunction::from_kernel(spec, t_data, linalg::solve_sym(a, v, 0.0));
  }
  LinearSieveSpec spec = q_class.sieve;
  spec.input_dim = static_cast<int>(t_data.cols());
  const Eigen::MatrixXd psi = features(spec, t_data);
  Eigen::MatrixXd a = psi.transpose() * psi;
  a.diagonal().array() += n * tilde_gamma_q;
  a.diagonal().array() += linalg::jitter_amount(a, jitter_scale);
  return FittedFunction::from_features(spec,
                                       linalg::solve_sym(a, (psi.transpose() * v).eval(), 0.0));
}

inline FittedFunction project_q(const MomentProblem& p, const FittedFunction& xi_hat,
                                const FunctionClassSpec& q_class, double tilde_gamma_q,
                                double jitter_scale = 1e-10) {
  const Eigen::VectorXd v = p.data.g1.cwiseProduct(xi_hat.evaluate(p.data.s));
  return project_q_values(v, p.data.t, q_class, tilde_gamma_q, jitter_scale);
}

// Clever-instrument variant: the test class is augmented with an unpenalized
// q_dagger direction, which forces E_n[q_dagger(T)(g2 - g1 h)] = 0 at the
// saddle. Realized as an equality-constrained solve.
inline FittedFunction estimate_h_clever(const MomentProblem& p, const FunctionClassSpec& h_class,
                                        const FunctionClassSpec& q_class,
                                        const PenaltyConfig& pen,
                                        const FittedFunction& q_dagger) {
  pen.validate();
  validate_problem(p);
  const Basis basis = make_basis(h_class, p.data.s);
  const TestOperator omega(q_class, p.data.t, pen.gamma_q, pen.jitter_scale);
  const auto core = detail::assemble_core(basis, p.data, omega);
  const Eigen::MatrixXd reg = pen.gamma_h * basis.norm_gram;
  const Eigen::VectorXd qdag_vals = q_dagger.evaluate(p.data.t);
  const Eigen::VectorXd c = detail::solve_h_coefficients_constrained(
      core, p.data.g2, pen.mu_n, reg, qdag_vals, pen.jitter_scale);
  FittedFunction h = basis.package(c);
  const double moment = qdag_vals.dot(residual(h, p.data)) / static_cast<double>(p.data.n());
  const double scale = 1.0 + p.data.g2.norm() / std::sqrt(static_cast<double>(p.data.n()));
  if (std::abs(moment) > 1e-8 * scale)
    throw SolverError("estimate_h_clever: constraint moment not attained");
  return h;
}

// Empirical value of the full minimax objective at a candidate h; the fitted
// minimizer must not be beaten by other class members.
inline double h_objective(const MomentProblem& p, const FittedFunction& h,
                          const TestOperator& omega, double mu_n, double gamma_h) {
  const Eigen::VectorXd hv = h.evaluate(p.data.s);
  const Eigen::VectorXd u = p.data.g1.cwiseProduct(hv) - p.data.g2;
  return omega.value(u) + mu_n * hv.squaredNorm() / static_cast<double>(p.data.n()) +
         gamma_h * h.class_norm_sq();
}

}  // namespace strongid
