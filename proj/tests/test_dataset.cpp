#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "strongid/dataset.hpp"
#include "strongid/rng.hpp"

using namespace strongid;

namespace {

Dataset tiny_dataset(Eigen::Index n) {
  Rng rng(7);
  Dataset d;
  d.s = rng.normal_matrix(n, 1);
  d.t = rng.normal_matrix(n, 1);
  d.g1 = Eigen::VectorXd::Ones(n);
  d.g2 = rng.normal_vector(n);
  return d;
}

FittedFunction line(double intercept, double slope) {
  Eigen::VectorXd w(2);
  w << intercept, slope;
  return FittedFunction::from_features(LinearSieveSpec{1, true, 1, false}, w);
}

}  // namespace

TEST_CASE("validate_dataset reports every violation") {
  Dataset d = tiny_dataset(10);
  REQUIRE(validate_dataset(d).empty());

  Dataset short_g1 = d;
  short_g1.g1 = Eigen::VectorXd::Ones(9);
  const auto v1 = validate_dataset(short_g1);
  REQUIRE(v1.size() == 1);
  REQUIRE(v1[0].find("length mismatch") != std::string::npos);

  Dataset with_nan = d;
  with_nan.s(3, 0) = std::numeric_limits<double>::quiet_NaN();
  const auto v2 = validate_dataset(with_nan);
  REQUIRE(v2.size() == 1);
  REQUIRE(v2[0].find("non-finite") != std::string::npos);

  Dataset one_row = tiny_dataset(2);
  one_row.s = one_row.s.topRows(1).eval();
  REQUIRE_FALSE(validate_dataset(one_row).empty());
}

TEST_CASE("residual arithmetic") {
  Dataset d;
  d.s.resize(2, 1);
  d.t.resize(2, 1);
  d.t << 0, 0;

  SECTION("identity case: g1 = 1, g2 = 0, h = 0") {
    d.s << 1, 2;
    d.g1 = Eigen::VectorXd::Ones(2);
    d.g2 = Eigen::VectorXd::Zero(2);
    REQUIRE(residual(FittedFunction::zero(1), d).isZero(0));
  }
  SECTION("g1 = 1, g2 = (1,2), h(s) = s at s = (1,1)") {
    d.s << 1, 1;
    d.g1 = Eigen::VectorXd::Ones(2);
    d.g2.resize(2);
    d.g2 << 1, 2;
    const Eigen::VectorXd r = residual(line(0.0, 1.0), d);
    REQUIRE(r(0) == Catch::Approx(0.0).margin(1e-15));
    REQUIRE(r(1) == Catch::Approx(1.0).margin(1e-15));
  }
  SECTION("g1 = 0 kills h") {
    d.s << 5, -7;
    d.g1 = Eigen::VectorXd::Zero(2);
    d.g2.resize(2);
    d.g2 << 3, -1;
    const Eigen::VectorXd r = residual(line(2.0, 3.0), d);
    REQUIRE(r(0) == 3.0);
    REQUIRE(r(1) == -1.0);
  }
}

TEST_CASE("functional_mean of the average finite difference") {
  const auto m = make_avg_finite_difference(0.1);
  Dataset d = tiny_dataset(50);

  SECTION("zero function gives zero") {
    REQUIRE(functional_mean(m, FittedFunction::zero(1), d) == Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("identity function has unit difference quotient everywhere") {
    const Eigen::VectorXd vals = m.values(line(0.0, 1.0), d);
    REQUIRE((vals.array() - 1.0).abs().maxCoeff() < 1e-12);
    REQUIRE(functional_mean(m, line(0.0, 1.0), d) == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("h(s) = s^2 on S = (0, 1): values 2s, mean 1") {
    Dataset two;
    two.s.resize(2, 1);
    two.s << 0, 1;
    two.t = two.s;
    two.g1 = Eigen::VectorXd::Ones(2);
    two.g2 = Eigen::VectorXd::Zero(2);
    Eigen::VectorXd w(3);
    w << 0, 0, 1;  // s^2 in the degree-2 basis
    const auto sq = FittedFunction::from_features(LinearSieveSpec{2, true, 1, false}, w);
    const Eigen::VectorXd vals = m.values(sq, two);
    REQUIRE(vals(0) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(vals(1) == Catch::Approx(2.0).margin(1e-12));
    REQUIRE(functional_mean(m, sq, two) == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("linearity of m and residual in the function argument") {
  Rng rng(99);
  Dataset d = tiny_dataset(40);
  const auto m = make_avg_finite_difference(0.1);
  for (int rep = 0; rep < 10; ++rep) {
    const double a = rng.normal(), b = rng.normal();
    Eigen::VectorXd wf = rng.normal_vector(4), wg = rng.normal_vector(4);
    const LinearSieveSpec spec{3, true, 1, false};
    const auto f = FittedFunction::from_features(spec, wf);
    const auto g = FittedFunction::from_features(spec, wg);
    const auto combo = FittedFunction::from_features(spec, a * wf + b * wg);
    REQUIRE(functional_mean(m, combo, d) ==
            Catch::Approx(a * functional_mean(m, f, d) + b * functional_mean(m, g, d))
                .margin(1e-10));
    const Eigen::VectorXd lhs = residual(combo, d);
    const Eigen::VectorXd rhs = d.g2 - a * (d.g2 - residual(f, d)) - b * (d.g2 - residual(g, d));
    REQUIRE((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("coefficient selector is linear with a one-hot dictionary vector") {
  Rng rng(5);
  Dataset d;
  d.s = rng.normal_matrix(30, 3);  // [X_a(2) | X_b(1)]
  d.t = rng.normal_matrix(30, 1);
  d.g1 = Eigen::VectorXd::Ones(30);
  d.g2 = rng.normal_vector(30);
  const auto m1 = make_coefficient_selector(1, 2);
  // a partially linear function theta = (0.3, -1.2), g(x) = 2x
  Eigen::VectorXd theta(2);
  theta << 0.3, -1.2;
  const auto f = FittedFunction::partially_linear(theta, line(0.0, 2.0));
  const Eigen::VectorXd vals = m1.values(f, d);
  REQUIRE((vals.array() + 1.2).abs().maxCoeff() < 1e-12);

  // dictionary means: [x_a1, x_a2, g-basis...] -> e_1
  const DesignFn design = [](const Eigen::MatrixXd& x) {
    Eigen::MatrixXd out(x.rows(), 4);
    out.col(0) = x.col(0);
    out.col(1) = x.col(1);
    out.col(2) = Eigen::VectorXd::Ones(x.rows());
    out.col(3) = x.col(2);
    return out;
  };
  const Eigen::VectorXd mbar = m1.dictionary_means(design, d);
  Eigen::VectorXd expect = Eigen::VectorXd::Zero(4);
  expect(1) = 1.0;
  REQUIRE((mbar - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("csv loading with a sidecar mapping") {
  const std::string csv = "z1,x1,yv,w\n0.5,1.0,2.0,0.1\n-0.25,0.0,1.0,0.2\n1.5,2.0,0.5,0.3\n";
  const std::string path = "test_dataset_tmp.csv";
  {
    std::ofstream out(path);
    out << csv;
  }
  const nlohmann::json mapping = {{"s", {"x1"}},
                                  {"t", {"z1"}},
                                  {"g1", 1.0},
                                  {"g2", "yv"},
                                  {"aux", {{"w", "w"}}},
                                  {"functional", {{"kind", "mean"}}}};
  const MomentProblem p = load_problem_csv(path, mapping);
  REQUIRE(p.data.n() == 3);
  REQUIRE(p.data.s(2, 0) == 2.0);
  REQUIRE(p.data.t(1, 0) == -0.25);
  REQUIRE(p.data.g1.isOnes());
  REQUIRE(p.data.g2(0) == 2.0);
  REQUIRE(p.data.aux.at("w")(2) == Catch::Approx(0.3));
  std::remove(path.c_str());
}
