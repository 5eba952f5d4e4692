#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "strongid/rng.hpp"

namespace strongid {

// ---------------------------------------------------------------------------
// Function class specs
// ---------------------------------------------------------------------------

// Polynomial feature map. For input dimension d > 1 the default basis is
// tensor-truncated: intercept (if flagged), plus per-coordinate powers up to
// `degree`, no cross terms. Setting cross_terms adds all monomials of total
// degree <= degree.
struct LinearSieveSpec {
  int degree = 1;
  bool intercept = true;
  int input_dim = 1;
  bool cross_terms = false;
};

// Gaussian kernel k(x, x') = exp(-|x - x'|^2 / (2 bw^2)). bandwidth <= 0
// requests the median heuristic, resolved against the anchor data at fit time.
struct GaussianRkhsSpec {
  double bandwidth = 0.0;
};

struct FunctionClassSpec {
  enum Kind { kLinearSieve, kGaussianRkhs };
  Kind kind = kLinearSieve;
  LinearSieveSpec sieve;
  GaussianRkhsSpec rkhs;

  static FunctionClassSpec linear_sieve(int degree, bool intercept, int input_dim,
                                        bool cross_terms = false) {
    FunctionClassSpec s;
    s.kind = kLinearSieve;
    s.sieve = {degree, intercept, input_dim, cross_terms};
    return s;
  }
  static FunctionClassSpec gaussian_rkhs(double bandwidth = 0.0) {
    FunctionClassSpec s;
    s.kind = kGaussianRkhs;
    s.rkhs = {bandwidth};
    return s;
  }

  bool operator==(const FunctionClassSpec& o) const {
    if (kind != o.kind) return false;
    if (kind == kLinearSieve)
      return sieve.degree == o.sieve.degree && sieve.intercept == o.sieve.intercept &&
             sieve.input_dim == o.sieve.input_dim && sieve.cross_terms == o.sieve.cross_terms;
    return rkhs.bandwidth == o.rkhs.bandwidth;
  }
};

inline constexpr int kMaxSieveDegree = 10;  // Vandermonde conditioning guard

namespace detail {

// Exponent tuples of total degree <= degree over d coordinates (cross terms).
inline void enumerate_monomials(int d, int degree, std::vector<int>& cur,
                                std::vector<std::vector<int>>& out) {
  if (static_cast<int>(cur.size()) == d) {
    out.push_back(cur);
    return;
  }
  int used = 0;
  for (const int e : cur) used += e;
  for (int e = 0; e <= degree - used; ++e) {
    cur.push_back(e);
    enumerate_monomials(d, degree, cur, out);
    cur.pop_back();
  }
}

}  // namespace detail

inline int sieve_feature_count(const LinearSieveSpec& s) {
  if (s.cross_terms) {
    std::vector<std::vector<int>> mono;
    std::vector<int> cur;
    detail::enumerate_monomials(s.input_dim, s.degree, cur, mono);
    return static_cast<int>(mono.size()) - (s.intercept ? 0 : 1);
  }
  return (s.intercept ? 1 : 0) + s.input_dim * s.degree;
}

inline Eigen::MatrixXd features(const LinearSieveSpec& spec, const Eigen::MatrixXd& x) {
  if (spec.degree < 0 || spec.degree > kMaxSieveDegree)
    throw std::invalid_argument("sieve degree outside [0, 10]");
  if (x.cols() != spec.input_dim)
    throw std::invalid_argument("features: input dimension mismatch");
  const Eigen::Index n = x.rows();
  if (spec.cross_terms) {
    std::vector<std::vector<int>> mono;
    std::vector<int> cur;
    detail::enumerate_monomials(spec.input_dim, spec.degree, cur, mono);
    std::vector<const std::vector<int>*> keep;
    for (const auto& m : mono) {
      const bool constant = std::all_of(m.begin(), m.end(), [](int e) { return e == 0; });
      if (constant && !spec.intercept) continue;
      keep.push_back(&m);
    }
    Eigen::MatrixXd out(n, static_cast<Eigen::Index>(keep.size()));
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      Eigen::VectorXd col = Eigen::VectorXd::Ones(n);
      for (int c = 0; c < spec.input_dim; ++c)
        for (int e = 0; e < (*keep[j])[c]; ++e) col.array() *= x.col(c).array();
      out.col(j) = col;
    }
    return out;
  }
  Eigen::MatrixXd out(n, sieve_feature_count(spec));
  Eigen::Index j = 0;
  if (spec.intercept) out.col(j++).setOnes();
  for (int deg = 1; deg <= spec.degree; ++deg)
    for (int c = 0; c < spec.input_dim; ++c)
      out.col(j++) = x.col(c).array().pow(deg);
  return out;
}

inline Eigen::MatrixXd gram(const GaussianRkhsSpec& spec, const Eigen::MatrixXd& x,
                            const Eigen::MatrixXd& xp) {
  if (x.cols() != xp.cols()) throw std::invalid_argument("gram: dimension mismatch");
  if (!(spec.bandwidth > 0.0))
    throw std::invalid_argument("gram: bandwidth must be resolved and positive");
  const double inv = -0.5 / (spec.bandwidth * spec.bandwidth);
  // |x_i - x'_j|^2 = |x_i|^2 + |x'_j|^2 - 2 x_i . x'_j
  Eigen::VectorXd xn = x.rowwise().squaredNorm();
  Eigen::VectorXd pn = xp.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = (-2.0 * x * xp.transpose());
  d2.colwise() += xn;
  d2.rowwise() += pn.transpose();
  return (d2.array().max(0.0) * inv).exp().matrix();
}

// Median of pairwise Euclidean distances; exact for n <= 2000, otherwise on a
// fixed-seed subsample of 2000 rows. Degenerate (zero median) falls back to 1.
inline double median_bandwidth(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.rows();
  if (n < 2) throw std::invalid_argument("median_bandwidth: need at least 2 rows");
  Eigen::MatrixXd xs;
  if (n > 2000) {
    Rng rng(0x6d656469616eull);  // fixed subsampling seed
    std::vector<Eigen::Index> idx(n);
    for (Eigen::Index i = 0; i < n; ++i) idx[i] = i;
    rng.shuffle(idx);
    xs.resize(2000, x.cols());
    for (Eigen::Index i = 0; i < 2000; ++i) xs.row(i) = x.row(idx[i]);
  } else {
    xs = x;
  }
  const Eigen::Index m = xs.rows();
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(m) * (m - 1) / 2);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j) d.push_back((xs.row(i) - xs.row(j)).norm());
  auto mid = d.begin() + d.size() / 2;
  std::nth_element(d.begin(), mid, d.end());
  double med = *mid;
  if (d.size() % 2 == 0) {
    auto lo = std::max_element(d.begin(), mid);
    med = 0.5 * (med + *lo);
  }
  return med > 0.0 ? med : 1.0;
}

inline GaussianRkhsSpec resolve_bandwidth(const GaussianRkhsSpec& spec,
                                          const Eigen::MatrixXd& anchors) {
  if (spec.bandwidth > 0.0) return spec;
  return GaussianRkhsSpec{median_bandwidth(anchors)};
}

// ---------------------------------------------------------------------------
// FittedFunction
// ---------------------------------------------------------------------------

// A fitted member of a function class. Feature and kernel forms carry a class
// norm; the partially-linear and sum forms exist to represent composite fits
// (theta' x_a + g(x_b), TMLE corrections across classes).
class FittedFunction {
 public:
  enum Kind { kFeatures, kKernelExpansion, kPartiallyLinear, kSum };

  FittedFunction() = default;

  static FittedFunction from_features(const LinearSieveSpec& spec, Eigen::VectorXd weights) {
    FittedFunction f;
    f.kind_ = kFeatures;
    f.sieve_ = spec;
    f.coef_ = std::move(weights);
    if (f.coef_.size() != sieve_feature_count(spec))
      throw std::invalid_argument("from_features: weight length mismatch");
    return f;
  }

  static FittedFunction from_kernel(const GaussianRkhsSpec& spec, Eigen::MatrixXd anchors,
                                    Eigen::VectorXd coefficients) {
    if (anchors.rows() != coefficients.size())
      throw std::invalid_argument("from_kernel: anchors/coefficients mismatch");
    if (!(spec.bandwidth > 0.0))
      throw std::invalid_argument("from_kernel: bandwidth must be resolved");
    FittedFunction f;
    f.kind_ = kKernelExpansion;
    f.rkhs_ = spec;
    f.anchors_ = std::move(anchors);
    f.coef_ = std::move(coefficients);
    return f;
  }

  static FittedFunction partially_linear(Eigen::VectorXd theta, FittedFunction g) {
    FittedFunction f;
    f.kind_ = kPartiallyLinear;
    f.coef_ = std::move(theta);
    f.terms_.emplace_back(1.0, std::make_shared<FittedFunction>(std::move(g)));
    return f;
  }

  static FittedFunction sum(double w1, FittedFunction a, double w2, FittedFunction b) {
    FittedFunction f;
    f.kind_ = kSum;
    f.terms_.emplace_back(w1, std::make_shared<FittedFunction>(std::move(a)));
    f.terms_.emplace_back(w2, std::make_shared<FittedFunction>(std::move(b)));
    return f;
  }

  // The zero function on a d-dimensional input space.
  static FittedFunction zero(int input_dim) {
    return from_features(LinearSieveSpec{0, true, input_dim, false},
                         Eigen::VectorXd::Zero(1));
  }

  Kind kind() const { return kind_; }
  const Eigen::VectorXd& coefficients() const { return coef_; }
  const Eigen::MatrixXd& anchors() const { return anchors_; }
  const LinearSieveSpec& sieve_spec() const { return sieve_; }
  const GaussianRkhsSpec& rkhs_spec() const { return rkhs_; }

  int input_dim() const {
    switch (kind_) {
      case kFeatures:
        return sieve_.input_dim;
      case kKernelExpansion:
        return static_cast<int>(anchors_.cols());
      case kPartiallyLinear:
        return static_cast<int>(coef_.size()) + terms_[0].second->input_dim();
      case kSum:
        return terms_[0].second->input_dim();
    }
    return 0;
  }

  Eigen::VectorXd evaluate(const Eigen::MatrixXd& x) const {
    switch (kind_) {
      case kFeatures:
        return features(sieve_, x) * coef_;
      case kKernelExpansion:
        return gram(rkhs_, x, anchors_) * coef_;
      case kPartiallyLinear: {
        const Eigen::Index da = coef_.size();
        if (x.cols() < da) throw std::invalid_argument("evaluate: too few columns for PL split");
        return x.leftCols(da) * coef_ +
               terms_[0].second->evaluate(x.rightCols(x.cols() - da));
      }
      case kSum: {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(x.rows());
        for (const auto& [w, f] : terms_) v += w * f->evaluate(x);
        return v;
      }
    }
    throw std::logic_error("evaluate: bad kind");
  }

  double evaluate_scalar(double x) const {
    Eigen::MatrixXd m(1, 1);
    m(0, 0) = x;
    return evaluate(m)(0);
  }

  // Squared class norm: theta'theta for features, alpha' K alpha for kernel
  // expansions. Composite forms have no single class norm.
  double class_norm_sq() const {
    switch (kind_) {
      case kFeatures:
        return coef_.squaredNorm();
      case kKernelExpansion: {
        if (coef_.size() == 0) return 0.0;
        return coef_.dot(gram(rkhs_, anchors_, anchors_) * coef_);
      }
      case kPartiallyLinear:
        return coef_.squaredNorm() + terms_[0].second->class_norm_sq();
      case kSum:
        throw std::logic_error("class_norm_sq undefined for sum of distinct classes");
    }
    throw std::logic_error("class_norm_sq: bad kind");
  }

  FittedFunction scaled(double c) const {
    FittedFunction f = *this;
    switch (kind_) {
      case kFeatures:
      case kKernelExpansion:
        f.coef_ *= c;
        break;
      case kPartiallyLinear:
        f.coef_ *= c;
        f.terms_[0].second = std::make_shared<FittedFunction>(terms_[0].second->scaled(c));
        break;
      case kSum:
        for (auto& [w, g] : f.terms_) w *= c;
        break;
    }
    return f;
  }

  // In-class addition this + c * other when both live in the same class with
  // identical parameterization; falls back to a sum node otherwise.
  FittedFunction plus_scaled(double c, const FittedFunction& other) const {
    if (kind_ == kFeatures && other.kind_ == kFeatures &&
        sieve_.degree == other.sieve_.degree && sieve_.intercept == other.sieve_.intercept &&
        sieve_.input_dim == other.sieve_.input_dim &&
        sieve_.cross_terms == other.sieve_.cross_terms) {
      return from_features(sieve_, coef_ + c * other.coef_);
    }
    if (kind_ == kKernelExpansion && other.kind_ == kKernelExpansion &&
        rkhs_.bandwidth == other.rkhs_.bandwidth && anchors_.rows() == other.anchors_.rows() &&
        anchors_ == other.anchors_) {
      return from_kernel(rkhs_, anchors_, coef_ + c * other.coef_);
    }
    if (kind_ == kPartiallyLinear && other.kind_ == kPartiallyLinear &&
        coef_.size() == other.coef_.size()) {
      FittedFunction g = terms_[0].second->plus_scaled(c, *other.terms_[0].second);
      if (g.kind_ != kSum)
        return partially_linear(coef_ + c * other.coef_, std::move(g));
    }
    return sum(1.0, *this, c, other);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    switch (kind_) {
      case kFeatures:
        j["kind"] = "features";
        j["spec"] = {{"degree", sieve_.degree},
                     {"intercept", sieve_.intercept},
                     {"input_dim", sieve_.input_dim},
                     {"cross_terms", sieve_.cross_terms}};
        break;
      case kKernelExpansion: {
        j["kind"] = "kernel_expansion";
        j["spec"] = {{"bandwidth", rkhs_.bandwidth}};
        std::vector<std::vector<double>> rows;
        for (Eigen::Index i = 0; i < anchors_.rows(); ++i) {
          std::vector<double> r(anchors_.cols());
          for (Eigen::Index c = 0; c < anchors_.cols(); ++c) r[c] = anchors_(i, c);
          rows.push_back(std::move(r));
        }
        j["anchors"] = rows;
        break;
      }
      case kPartiallyLinear:
        j["kind"] = "partially_linear";
        j["g"] = terms_[0].second->to_json();
        break;
      case kSum: {
        j["kind"] = "sum";
        nlohmann::json terms = nlohmann::json::array();
        for (const auto& [w, f] : terms_) terms.push_back({{"weight", w}, {"fn", f->to_json()}});
        j["terms"] = terms;
        break;
      }
    }
    if (kind_ != kSum)
      j["coefficients"] = std::vector<double>(coef_.data(), coef_.data() + coef_.size());
    return j;
  }

  static FittedFunction from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind");
    auto coef = [&]() {
      const auto v = j.at("coefficients").get<std::vector<double>>();
      return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()))
          .eval();
    };
    if (kind == "features") {
      const auto& s = j.at("spec");
      return from_features(LinearSieveSpec{s.at("degree"), s.at("intercept"), s.at("input_dim"),
                                           s.at("cross_terms")},
                           coef());
    }
    if (kind == "kernel_expansion") {
      const auto rows = j.at("anchors").get<std::vector<std::vector<double>>>();
      Eigen::MatrixXd anchors(static_cast<Eigen::Index>(rows.size()),
                              rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
      for (Eigen::Index i = 0; i < anchors.rows(); ++i)
        for (Eigen::Index c = 0; c < anchors.cols(); ++c)
          anchors(i, c) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
      return from_kernel(GaussianRkhsSpec{j.at("spec").at("bandwidth")}, std::move(anchors),
                         coef());
    }
    if (kind == "partially_linear")
      return partially_linear(coef(), from_json(j.at("g")));
    if (kind == "sum") {
      const auto& terms = j.at("terms");
      if (terms.size() != 2) throw std::invalid_argument("from_json: sum arity");
      return sum(terms[0].at("weight"), from_json(terms[0].at("fn")), terms[1].at("weight"),
                 from_json(terms[1].at("fn")));
    }
    throw std::invalid_argument("from_json: unknown FittedFunction kind " + kind);
  }

 private:
  Kind kind_ = kFeatures;
  LinearSieveSpec sieve_{0, true, 1, false};
  GaussianRkhsSpec rkhs_;
  Eigen::MatrixXd anchors_;
  Eigen::VectorXd coef_ = Eigen::VectorXd::Zero(1);
  std::vector<std::pair<double, std::shared_ptr<FittedFunction>>> terms_;
};

inline Eigen::VectorXd evaluate(const FittedFunction& f, const Eigen::MatrixXd& x) {
  return f.evaluate(x);
}

inline double class_norm_sq(const FittedFunction& f) { return f.class_norm_sq(); }

}  // namespace strongid
