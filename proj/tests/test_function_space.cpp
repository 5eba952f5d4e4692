#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>

#include "strongid/function_space.hpp"
#include "strongid/rng.hpp"

using namespace strongid;

TEST_CASE("sieve features") {
  SECTION("degree 2 with intercept, scalar") {
    Eigen::MatrixXd x(1, 1);
    x << 2.0;
    const Eigen::MatrixXd f = features(LinearSieveSpec{2, true, 1, false}, x);
    REQUIRE(f.rows() == 1);
    REQUIRE(f.cols() == 3);
    REQUIRE(f(0, 0) == 1.0);
    REQUIRE(f(0, 1) == 2.0);
    REQUIRE(f(0, 2) == 4.0);
  }
  SECTION("degree 1, no intercept, two coordinates") {
    Eigen::MatrixXd x(1, 2);
    x << 3.0, -1.0;
    const Eigen::MatrixXd f = features(LinearSieveSpec{1, false, 2, false}, x);
    REQUIRE(f.cols() == 2);
    REQUIRE(f(0, 0) == 3.0);
    REQUIRE(f(0, 1) == -1.0);
  }
  SECTION("degree 0 with intercept is the constant column") {
    Eigen::MatrixXd x(4, 2);
    x.setRandom();
    const Eigen::MatrixXd f = features(LinearSieveSpec{0, true, 2, false}, x);
    REQUIRE(f.cols() == 1);
    REQUIRE(f.isOnes());
  }
  SECTION("tensor truncation: no cross terms by default") {
    REQUIRE(sieve_feature_count(LinearSieveSpec{3, true, 2, false}) == 7);
    // with cross terms: all monomials of total degree <= 3 over 2 vars = 10
    REQUIRE(sieve_feature_count(LinearSieveSpec{3, true, 2, true}) == 10);
    Eigen::MatrixXd x(1, 2);
    x << 2.0, 3.0;
    const Eigen::MatrixXd f = features(LinearSieveSpec{2, true, 2, true}, x);
    bool has_cross = false;
    for (Eigen::Index j = 0; j < f.cols(); ++j)
      if (f(0, j) == 6.0) has_cross = true;  // the x1*x2 monomial
    REQUIRE(has_cross);
  }
  SECTION("degree guard") {
    Eigen::MatrixXd x(1, 1);
    x << 1.0;
    REQUIRE_THROWS_AS(features(LinearSieveSpec{11, true, 1, false}, x), std::invalid_argument);
  }
}

TEST_CASE("gaussian gram") {
  SECTION("single point has unit self-similarity") {
    Eigen::MatrixXd x(1, 1);
    x << 0.3;
    const Eigen::MatrixXd k = gram(GaussianRkhsSpec{1.7}, x, x);
    REQUIRE(k(0, 0) == Catch::Approx(1.0).margin(1e-14));
  }
  SECTION("distance bandwidth*sqrt(2) gives exp(-1)") {
    const double bw = 0.8;
    Eigen::MatrixXd x(2, 1);
    x << 0.0, bw * std::sqrt(2.0);
    const Eigen::MatrixXd k = gram(GaussianRkhsSpec{bw}, x, x);
    REQUIRE(k(0, 1) == Catch::Approx(std::exp(-1.0)).epsilon(1e-12));
  }
  SECTION("gram at identical inputs is symmetric PSD with unit diagonal") {
    Rng rng(21);
    const Eigen::MatrixXd x = rng.normal_matrix(5, 2);
    Eigen::MatrixXd k = gram(GaussianRkhsSpec{1.1}, x, x);
    REQUIRE((k - k.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    REQUIRE((k.diagonal().array() - 1.0).abs().maxCoeff() < 1e-14);
    const Eigen::MatrixXd sym = 0.5 * (k + k.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
    REQUIRE(eig.eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("median bandwidth") {
  Eigen::MatrixXd two(2, 1);
  two << 0.0, 1.0;
  REQUIRE(median_bandwidth(two) == Catch::Approx(1.0));

  Eigen::MatrixXd three(3, 1);
  three << 0.0, 1.0, 2.0;
  REQUIRE(median_bandwidth(three) == Catch::Approx(1.0));  // median of {1, 1, 2}

  Eigen::MatrixXd degenerate = Eigen::MatrixXd::Zero(3, 1);
  REQUIRE(median_bandwidth(degenerate) == 1.0);

  Eigen::MatrixXd one(1, 1);
  REQUIRE_THROWS_AS(median_bandwidth(one), std::invalid_argument);

  // subsampled path stays deterministic
  Rng rng(9);
  const Eigen::MatrixXd big = rng.normal_matrix(2500, 1);
  REQUIRE(median_bandwidth(big) == median_bandwidth(big));
}

TEST_CASE("evaluate and class norms") {
  SECTION("zero weights evaluate to zero") {
    Rng rng(3);
    const Eigen::MatrixXd x = rng.normal_matrix(6, 1);
    REQUIRE(FittedFunction::zero(1).evaluate(x).isZero(0));
  }
  SECTION("feature function evaluation") {
    Eigen::VectorXd w(2);
    w << 0.0, 1.0;
    const auto f = FittedFunction::from_features(LinearSieveSpec{1, true, 1, false}, w);
    REQUIRE(f.evaluate_scalar(5.0) == Catch::Approx(5.0));
  }
  SECTION("kernel expansion at its own anchor") {
    Eigen::MatrixXd anchor(1, 1);
    anchor << 0.4;
    Eigen::VectorXd c(1);
    c << 2.5;
    const auto f = FittedFunction::from_kernel(GaussianRkhsSpec{0.9}, anchor, c);
    REQUIRE(f.evaluate_scalar(0.4) == Catch::Approx(2.5));
    REQUIRE(f.class_norm_sq() == Catch::Approx(6.25));  // c^2 since k(x,x)=1
  }
  SECTION("feature norm is theta'theta") {
    Eigen::VectorXd w(2);
    w << 3.0, 4.0;
    const auto f = FittedFunction::from_features(LinearSieveSpec{1, true, 1, false}, w);
    REQUIRE(f.class_norm_sq() == Catch::Approx(25.0));
  }
  SECTION("norm is a quadratic form and evaluation is linear in coefficients") {
    Rng rng(17);
    const Eigen::MatrixXd anchors = rng.normal_matrix(8, 2);
    const Eigen::MatrixXd x = rng.normal_matrix(5, 2);
    const Eigen::VectorXd c = rng.normal_vector(8);
    const GaussianRkhsSpec spec{1.3};
    const auto f = FittedFunction::from_kernel(spec, anchors, c);
    const auto f3 = FittedFunction::from_kernel(spec, anchors, 3.0 * c);
    REQUIRE(f3.class_norm_sq() == Catch::Approx(9.0 * f.class_norm_sq()).epsilon(1e-12));
    REQUIRE((f3.evaluate(x) - 3.0 * f.evaluate(x)).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(f.scaled(3.0).class_norm_sq() == Catch::Approx(f3.class_norm_sq()));
  }
}

TEST_CASE("plus_scaled merges matching classes and falls back to sums") {
  Rng rng(31);
  const LinearSieveSpec spec{2, true, 1, false};
  const auto f = FittedFunction::from_features(spec, rng.normal_vector(3));
  const auto g = FittedFunction::from_features(spec, rng.normal_vector(3));
  const auto sum = f.plus_scaled(0.7, g);
  REQUIRE(sum.kind() == FittedFunction::kFeatures);
  const Eigen::MatrixXd x = rng.normal_matrix(4, 1);
  REQUIRE((sum.evaluate(x) - (f.evaluate(x) + 0.7 * g.evaluate(x))).cwiseAbs().maxCoeff() <
          1e-13);

  const auto k = FittedFunction::from_kernel(GaussianRkhsSpec{1.0}, rng.normal_matrix(3, 1),
                                             rng.normal_vector(3));
  const auto mixed = f.plus_scaled(-0.5, k);
  REQUIRE(mixed.kind() == FittedFunction::kSum);
  REQUIRE((mixed.evaluate(x) - (f.evaluate(x) - 0.5 * k.evaluate(x))).cwiseAbs().maxCoeff() <
          1e-13);
  REQUIRE_THROWS_AS(mixed.class_norm_sq(), std::logic_error);
}

TEST_CASE("json round trip preserves evaluation") {
  Rng rng(41);
  const Eigen::MatrixXd x = rng.normal_matrix(6, 1);

  const auto f = FittedFunction::from_features(LinearSieveSpec{2, false, 1, false},
                                               rng.normal_vector(2));
  const auto f2 = FittedFunction::from_json(f.to_json());
  REQUIRE((f.evaluate(x) - f2.evaluate(x)).cwiseAbs().maxCoeff() == 0.0);

  const auto k = FittedFunction::from_kernel(GaussianRkhsSpec{0.77}, rng.normal_matrix(4, 1),
                                             rng.normal_vector(4));
  const auto k2 = FittedFunction::from_json(k.to_json());
  REQUIRE((k.evaluate(x) - k2.evaluate(x)).cwiseAbs().maxCoeff() == 0.0);

  Eigen::VectorXd theta(1);
  theta << -2.0;
  const auto plf = FittedFunction::partially_linear(theta, k);
  const auto plf2 = FittedFunction::from_json(plf.to_json());
  const Eigen::MatrixXd x2 = rng.normal_matrix(6, 2);
  REQUIRE((plf.evaluate(x2) - plf2.evaluate(x2)).cwiseAbs().maxCoeff() == 0.0);

  const auto s = f.plus_scaled(1.5, k);
  const auto s2 = FittedFunction::from_json(s.to_json());
  REQUIRE((s.evaluate(x) - s2.evaluate(x)).cwiseAbs().maxCoeff() == 0.0);
}
