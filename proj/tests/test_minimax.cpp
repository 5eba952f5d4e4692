#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>

#include "strongid/dgp.hpp"
#include "strongid/minimax.hpp"
#include "strongid/rng.hpp"

using namespace strongid;

namespace {

const FunctionClassSpec kLin = FunctionClassSpec::linear_sieve(1, false, 1);
const FunctionClassSpec kQuad = FunctionClassSpec::linear_sieve(2, true, 1);
const FunctionClassSpec kRkhs = FunctionClassSpec::gaussian_rkhs();

MomentProblem sin_problem(Eigen::Index n, std::uint64_t seed, double rho = 0.5) {
  dgp::DgpConfig cfg;
  cfg.rho = rho;
  cfg.n = n;
  cfg.seed = seed;
  cfg.h0_kind = dgp::H0Kind::kSin;
  return dgp::make_problem(cfg);
}

double ols_slope(const FittedFunction& f, const Eigen::MatrixXd& x) {
  const Eigen::VectorXd v = f.evaluate(x);
  return x.col(0).dot(v) / x.col(0).squaredNorm();
}

LinearFunctionalSpec zero_functional() {
  LinearFunctionalSpec m;
  m.kind = "zero";
  m.eval_all = [](const FunctionHandle&, const Dataset& d) {
    return Eigen::VectorXd::Zero(d.n()).eval();
  };
  m.dictionary_means = [](const DesignFn& design, const Dataset& d) {
    return Eigen::VectorXd::Zero(design(d.s.topRows(1)).cols()).eval();
  };
  return m;
}

}  // namespace

TEST_CASE("test operator closed form") {
  SECTION("zero residual attains zero value with zero maximizer") {
    Rng rng(1);
    const Eigen::MatrixXd t = rng.normal_matrix(12, 1);
    const TestOperator om = build_test_operator(kRkhs, t, 0.05);
    const Eigen::VectorXd u = Eigen::VectorXd::Zero(12);
    REQUIRE(om.value(u) == 0.0);
    REQUIRE(om.max_coefficients(u).isZero(1e-14));
  }
  SECTION("1x1 arithmetic: K=1, gamma=0.5, u=2") {
    Eigen::MatrixXd t(1, 1);
    t << 0.0;
    const TestOperator om = build_test_operator(FunctionClassSpec::gaussian_rkhs(1.0), t, 0.5);
    Eigen::VectorXd u(1);
    u << 2.0;
    // beta = u / (K + 2 n gamma) = 2 / (1 + 1) = 1; value = u'Omega u / 2n = 1
    REQUIRE(om.max_coefficients(u)(0) == Catch::Approx(1.0).epsilon(1e-9));
    REQUIRE(om.value(u) == Catch::Approx(1.0).epsilon(1e-9));
  }
  SECTION("value is between 0 and u'u/(2n)") {
    Rng rng(2);
    const Eigen::MatrixXd t = rng.normal_matrix(40, 1);
    for (const auto& spec : {kRkhs, kQuad}) {
      const TestOperator om = build_test_operator(spec, t, 0.02);
      for (int rep = 0; rep < 10; ++rep) {
        const Eigen::VectorXd u = rng.normal_vector(40);
        const double v = om.value(u);
        REQUIRE(v >= 0.0);
        REQUIRE(v <= u.squaredNorm() / 80.0 + 1e-12);
      }
    }
  }
  SECTION("materialized operator is symmetric PSD with eigenvalues below 1") {
    Rng rng(3);
    const Eigen::MatrixXd t = rng.normal_matrix(25, 1);
    for (const auto& spec : {kRkhs, kQuad}) {
      const TestOperator om = build_test_operator(spec, t, 0.03);
      const Eigen::MatrixXd omega = om.materialize();
      REQUIRE((omega - omega.transpose()).cwiseAbs().maxCoeff() < 1e-12);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (omega + omega.transpose()));
      REQUIRE(eig.eigenvalues().minCoeff() >= -1e-12);
      REQUIRE(eig.eigenvalues().maxCoeff() < 1.0);
    }
  }
  SECTION("maximizer fitted values match the operator application") {
    Rng rng(4);
    const Eigen::MatrixXd t = rng.normal_matrix(30, 1);
    const Eigen::VectorXd u = rng.normal_vector(30);
    for (const auto& spec : {kRkhs, kQuad}) {
      const TestOperator om = build_test_operator(spec, t, 0.01);
      const FittedFunction q = om.max_function(u);
      REQUIRE((q.evaluate(t) - om.apply(u)).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("estimate_h") {
  SECTION("exact specification attains zero projected residual") {
    Rng rng(5);
    Dataset d;
    d.s = rng.normal_matrix(200, 1);
    d.t = 0.8 * d.s + 0.2 * rng.normal_matrix(200, 1);
    d.g1 = Eigen::VectorXd::Ones(200);
    d.g2 = 1.7 * d.s.col(0);  // h*(s) = 1.7 s lies in the class
    MomentProblem p{d, make_mean_functional()};
    PenaltyConfig pen;
    pen.gamma_q = 0.01;
    const FittedFunction h = estimate_h(p, kLin, kLin, pen);
    const TestOperator om = build_test_operator(kLin, d.t, pen.gamma_q);
    const Eigen::VectorXd u = d.g1.cwiseProduct(h.evaluate(d.s)) - d.g2;
    REQUIRE(std::sqrt(2.0 * 200 * om.value(u)) < 1e-8);
  }
  SECTION("zero g2 fits the zero function") {
    MomentProblem p = sin_problem(300, 6);
    p.data.g2.setZero();
    const FittedFunction h = estimate_h(p, kRkhs, kRkhs, PenaltyConfig::defaults_for(300));
    REQUIRE(h.evaluate(p.data.s).cwiseAbs().maxCoeff() < 1e-10);
  }
  SECTION("matches two stage least squares with linear classes") {
    MomentProblem p = sin_problem(2000, 7);
    const auto pen = PenaltyConfig::defaults_for(2000);
    const FittedFunction h = estimate_h(p, kLin, kLin, pen);
    const double slope_2sls = dgp::tsls(p.data);
    REQUIRE(std::abs(h.coefficients()(0) - slope_2sls) <
            10.0 * pen.mu_n * (1.0 + std::abs(slope_2sls)));
  }
  SECTION("first-order condition by direct substitution (sieve)") {
    MomentProblem p = sin_problem(250, 8);
    const auto pen = PenaltyConfig::defaults_for(250);
    const FittedFunction h = estimate_h(p, kQuad, kQuad, pen);
    const Basis basis = make_basis(kQuad, p.data.s);
    const TestOperator om = build_test_operator(kQuad, p.data.t, pen.gamma_q);
    const Eigen::MatrixXd b = basis.design(p.data.s);
    const Eigen::MatrixXd m = b.transpose() * om.apply(b) + 2.0 * pen.mu_n * b.transpose() * b +
                              2.0 * 250 * pen.gamma_h * basis.norm_gram;
    const Eigen::VectorXd rhs = b.transpose() * om.apply(p.data.g2);
    const Eigen::VectorXd foc = m * h.coefficients() - rhs;
    REQUIRE(foc.norm() <= 1e-6 * rhs.norm() + 1e-10);
  }
  SECTION("first-order condition by direct substitution (rkhs)") {
    MomentProblem p = sin_problem(150, 9);
    const auto pen = PenaltyConfig::defaults_for(150);
    const FittedFunction h = estimate_h(p, kRkhs, kRkhs, pen);
    const Basis basis =
        make_basis(FunctionClassSpec::gaussian_rkhs(h.rkhs_spec().bandwidth), p.data.s);
    const TestOperator om = build_test_operator(kRkhs, p.data.t, pen.gamma_q);
    const Eigen::MatrixXd b = basis.design(p.data.s);
    const Eigen::MatrixXd m = b.transpose() * om.apply(b) + 2.0 * pen.mu_n * b.transpose() * b +
                              2.0 * 150 * pen.gamma_h * basis.norm_gram;
    const Eigen::VectorXd rhs = b.transpose() * om.apply(p.data.g2);
    const Eigen::VectorXd foc = m * h.coefficients() - rhs;
    REQUIRE(foc.norm() <= 1e-6 * rhs.norm() + 1e-10);
  }
  SECTION("objective descent against the zero function and random members") {
    MomentProblem p = sin_problem(300, 10);
    const auto pen = PenaltyConfig::defaults_for(300);
    const FittedFunction h = estimate_h(p, kQuad, kQuad, pen);
    const TestOperator om = build_test_operator(kQuad, p.data.t, pen.gamma_q);
    const double at_h = h_objective(p, h, om, pen.mu_n, pen.gamma_h);
    REQUIRE(at_h <= h_objective(p, FittedFunction::zero(1), om, pen.mu_n, pen.gamma_h) + 1e-12);
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
      const auto other = FittedFunction::from_features(LinearSieveSpec{2, true, 1, false},
                                                       rng.normal_vector(3));
      REQUIRE(at_h <= h_objective(p, other, om, pen.mu_n, pen.gamma_h) + 1e-12);
    }
  }
  SECTION("value penalty pulls the fit toward zero when T carries no signal") {
    Rng rng(12);
    Dataset d;
    d.s = rng.normal_matrix(400, 1);
    d.t = rng.normal_matrix(400, 1);  // independent of S
    d.g1 = Eigen::VectorXd::Ones(400);
    d.g2 = d.s.col(0) + 0.1 * rng.normal_vector(400);
    MomentProblem p{d, make_mean_functional()};
    double prev = std::numeric_limits<double>::infinity();
    for (const double mu : {1e-3, 1e-2, 1e-1}) {
      PenaltyConfig pen = PenaltyConfig::defaults_for(400);
      pen.mu_n = mu;
      const FittedFunction h = estimate_h(p, kLin, kLin, pen);
      const double norm_n = h.evaluate(d.s).norm();
      REQUIRE(norm_n < prev);
      prev = norm_n;
    }
  }
}

TEST_CASE("estimate_xi") {
  SECTION("zero functional fits the zero direction") {
    MomentProblem p = sin_problem(300, 13);
    p.functional = zero_functional();
    const FittedFunction xi = estimate_xi(p, kRkhs, kRkhs, PenaltyConfig::defaults_for(300));
    REQUIRE(xi.evaluate(p.data.s).cwiseAbs().maxCoeff() < 1e-10);
  }
  SECTION("exogenous case recovers the average-derivative representer") {
    // S = T: xi estimates a0(s) = s / Var(S), slope 1/2.01
    MomentProblem p = sin_problem(2000, 14);
    p.data.t = p.data.s;
    const FittedFunction xi = estimate_xi(p, kLin, kLin, PenaltyConfig::defaults_for(2000));
    REQUIRE(ols_slope(xi, p.data.s) == Catch::Approx(1.0 / 2.01).epsilon(0.15));
  }
  SECTION("endogenous case recovers the closed-form debiasing slope") {
    // xi0(s) = s / (rho^2 sigma_T^2) = s at rho = 0.5, sigma_T = 2
    MomentProblem p = sin_problem(2000, 15);
    const FittedFunction xi = estimate_xi(p, kLin, kLin, PenaltyConfig::defaults_for(2000));
    REQUIRE(ols_slope(xi, p.data.s) == Catch::Approx(1.0).margin(0.15));
  }
  SECTION("first-order condition by direct substitution") {
    MomentProblem p = sin_problem(250, 16);
    const auto pen = PenaltyConfig::defaults_for(250);
    const FittedFunction xi = estimate_xi(p, kQuad, kQuad, pen);
    const Basis basis = make_basis(kQuad, p.data.s);
    const TestOperator om = build_test_operator(kQuad, p.data.t, pen.gamma_q);
    const Eigen::MatrixXd b = basis.design(p.data.s);
    const Eigen::MatrixXd m =
        b.transpose() * om.apply(b) + 2.0 * 250 * pen.gamma_xi * basis.norm_gram;
    const Eigen::VectorXd rhs = 250.0 * p.functional.dictionary_means(basis.design, p.data);
    const Eigen::VectorXd foc = m * xi.coefficients() - rhs;
    REQUIRE(foc.norm() <= 1e-6 * rhs.norm() + 1e-10);
  }
}

TEST_CASE("project_q") {
  SECTION("zero target projects to zero") {
    MomentProblem p = sin_problem(200, 17);
    const FittedFunction q = project_q(p, FittedFunction::zero(1), kRkhs, 0.01);
    REQUIRE(q.evaluate(p.data.t).cwiseAbs().maxCoeff() < 1e-12);
  }
  SECTION("unpenalized kernel ridge interpolates distinct rows") {
    Eigen::MatrixXd t(5, 1);
    t << -2.0, -0.7, 0.1, 1.1, 2.3;
    Rng rng(18);
    const Eigen::VectorXd v = rng.normal_vector(5);
    const FittedFunction q = project_q_values(v, t, FunctionClassSpec::gaussian_rkhs(1.0), 0.0);
    REQUIRE((q.evaluate(t) - v).cwiseAbs().maxCoeff() < 1e-6);
  }
  SECTION("recovers the closed-form q slope on the simulation design") {
    MomentProblem p = sin_problem(2000, 19);
    const auto pen = PenaltyConfig::defaults_for(2000);
    const FittedFunction xi = estimate_xi(p, kLin, kLin, pen);
    const FittedFunction q = project_q(p, xi, kLin, pen.tilde_gamma_q);
    REQUIRE(ols_slope(q, p.data.t) == Catch::Approx(0.5).margin(0.10));
  }
}

TEST_CASE("estimate_h_clever") {
  MomentProblem p = sin_problem(1000, 20);
  PenaltyConfig pen;
  pen.gamma_q = 1e-4;
  pen.tilde_gamma_q = 2e-4;  // matches the inner-sup scaling, see last section

  SECTION("zero instrument direction reproduces the unconstrained fit") {
    const auto pen_d = PenaltyConfig::defaults_for(1000);
    const FittedFunction plain = estimate_h(p, kQuad, kQuad, pen_d);
    const FittedFunction clever =
        estimate_h_clever(p, kQuad, kQuad, pen_d, FittedFunction::zero(1));
    REQUIRE((plain.coefficients() - clever.coefficients()).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("constraint moment vanishes") {
    const auto pen_d = PenaltyConfig::defaults_for(1000);
    const FittedFunction xi = estimate_xi(p, kQuad, kQuad, pen_d);
    const FittedFunction qd = project_q(p, xi, kQuad, pen_d.tilde_gamma_q);
    const FittedFunction h = estimate_h_clever(p, kQuad, kQuad, pen_d, qd);
    const double moment = qd.evaluate(p.data.t).dot(residual(h, p.data)) / p.data.n();
    const double scale = 1.0 + p.data.g2.norm() / std::sqrt(1000.0);
    REQUIRE(std::abs(moment) < 1e-8 * scale);
  }
  SECTION("equals the one-step corrected fit in linear classes") {
    // Exactness configuration: no penalties on h / xi, and the projection
    // ridge tilde_gamma = 2 gamma_q so that the fitted q matches the
    // inner-sup maximizer. The q class is richer than the h class so the
    // constraint actually binds.
    const FittedFunction xi = estimate_xi(p, kLin, kQuad, pen);
    const FittedFunction qd = project_q(p, xi, kQuad, pen.tilde_gamma_q);
    const FittedFunction plain = estimate_h(p, kLin, kQuad, pen);
    const FittedFunction clever = estimate_h_clever(p, kLin, kQuad, pen, qd);
    const double num = qd.evaluate(p.data.t).dot(residual(plain, p.data));
    const double den = qd.evaluate(p.data.t).dot(p.data.g1.cwiseProduct(xi.evaluate(p.data.s)));
    const double eps = num / den;
    REQUIRE(std::abs(eps) > 1e-6);  // the constraint is not vacuous here
    const FittedFunction corrected = plain.plus_scaled(eps, xi);
    REQUIRE((clever.evaluate(p.data.s) - corrected.evaluate(p.data.s)).cwiseAbs().maxCoeff() <
            1e-8);
  }
}
