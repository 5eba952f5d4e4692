#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace strongid {

// Thrown when a linear system that a solver contract requires to be solvable
// turns out singular (even after jitter) or produces non-finite output.
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace linalg {

// Jitter applied to every symmetric solve: scale * mean diagonal magnitude.
inline double jitter_amount(const Eigen::MatrixXd& a, double jitter_scale) {
  const double dim = static_cast<double>(a.rows());
  const double tr = std::abs(a.trace()) / std::max(dim, 1.0);
  return jitter_scale * (tr > 0 ? tr : 1.0);
}

// Factored symmetric PSD solve A x = b with additive jitter. The factor is
// reusable across right-hand sides.
class SymSolver {
 public:
  SymSolver(const Eigen::MatrixXd& a, double jitter_scale) {
    Eigen::MatrixXd work = a;
    const double j = jitter_amount(a, jitter_scale);
    work.diagonal().array() += j;
    ldlt_.compute(work);
    if (ldlt_.info() != Eigen::Success)
      throw SolverError("symmetric factorization failed (dim " +
                        std::to_string(a.rows()) + ")");
  }

  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const {
    Eigen::MatrixXd x = ldlt_.solve(b);
    if (!x.allFinite()) throw SolverError("symmetric solve produced non-finite values");
    return x;
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    Eigen::VectorXd x = ldlt_.solve(b);
    if (!x.allFinite()) throw SolverError("symmetric solve produced non-finite values");
    return x;
  }

 private:
  Eigen::LDLT<Eigen::MatrixXd> ldlt_;
};

inline Eigen::VectorXd solve_sym(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                 double jitter_scale) {
  return SymSolver(a, jitter_scale).solve(b);
}

// Minimum-norm least-squares solution of A x = b with a relative singular
// value cutoff. Also reports the residual norm, which callers use as a
// feasibility test.
struct LstsqResult {
  Eigen::VectorXd x;
  double residual_norm = 0.0;
};

inline LstsqResult min_norm_lstsq(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                  double sv_rcut = 1e-10) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double cut = sv.size() > 0 ? sv_rcut * sv(0) : 0.0;
  Eigen::VectorXd inv = sv;
  for (Eigen::Index i = 0; i < sv.size(); ++i) inv(i) = sv(i) > cut ? 1.0 / sv(i) : 0.0;
  LstsqResult out;
  out.x = svd.matrixV() * inv.asDiagonal() * (svd.matrixU().transpose() * b);
  out.residual_norm = (a * out.x - b).norm();
  return out;
}

// Standard normal quantile, Wichura's AS241 (PPND16, double precision).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p outside (0,1)");
  const double q = p - 0.5;
  double r;
  if (std::abs(q) <= 0.425) {
    r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
               1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
             1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
           (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
               5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
             4.2313330701600911252e1) * r + 1.0);
  }
  r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
              3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
            4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
              6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
            2.05319162663775882187e0) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
              2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
            5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
              1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
            5.99832206555887937690e-1) * r + 1.0);
  }
  return q < 0.0 ? -val : val;
}

}  // namespace linalg
}  // namespace strongid
