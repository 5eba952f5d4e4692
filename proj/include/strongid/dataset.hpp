#pragma once

#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "strongid/function_space.hpp"
#include "strongid/io.hpp"

namespace strongid {

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

// n observations of the conditional moment problem
//   E[g1(W) h(S) | T] = E[g2(W) | T].
// aux holds named columns of W needed only by the functional.
struct Dataset {
  Eigen::MatrixXd s;  // n x d_s
  Eigen::MatrixXd t;  // n x d_t
  Eigen::VectorXd g1;
  Eigen::VectorXd g2;
  std::map<std::string, Eigen::VectorXd> aux;

  Eigen::Index n() const { return s.rows(); }
  Eigen::Index d_s() const { return s.cols(); }
  Eigen::Index d_t() const { return t.cols(); }
};

// Reports every invariant violation; empty result means the dataset is valid.
inline std::vector<std::string> validate_dataset(const Dataset& d) {
  std::vector<std::string> out;
  const Eigen::Index n = d.s.rows();
  if (n < 2) out.push_back("need at least 2 observations, have " + std::to_string(n));
  if (d.s.cols() < 1) out.push_back("S block must have at least one column");
  if (d.t.cols() < 1) out.push_back("T block must have at least one column");
  auto check_rows = [&](Eigen::Index rows, const std::string& name) {
    if (rows != n)
      out.push_back("length mismatch: " + name + " has " + std::to_string(rows) + " rows, S has " +
                    std::to_string(n));
  };
  check_rows(d.t.rows(), "T");
  check_rows(d.g1.size(), "g1");
  check_rows(d.g2.size(), "g2");
  for (const auto& [name, col] : d.aux) check_rows(col.size(), "aux '" + name + "'");
  auto check_finite = [&](bool finite, const std::string& name) {
    if (!finite) out.push_back("non-finite entry in " + name);
  };
  check_finite(d.s.allFinite(), "S");
  check_finite(d.t.allFinite(), "T");
  check_finite(d.g1.allFinite(), "g1");
  check_finite(d.g2.allFinite(), "g2");
  for (const auto& [name, col] : d.aux) check_finite(col.allFinite(), "aux '" + name + "'");
  return out;
}

inline Dataset subset_rows(const Dataset& d, std::span<const Eigen::Index> rows) {
  const Eigen::Index m = static_cast<Eigen::Index>(rows.size());
  Dataset out;
  out.s.resize(m, d.s.cols());
  out.t.resize(m, d.t.cols());
  out.g1.resize(m);
  out.g2.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    out.s.row(i) = d.s.row(rows[i]);
    out.t.row(i) = d.t.row(rows[i]);
    out.g1(i) = d.g1(rows[i]);
    out.g2(i) = d.g2(rows[i]);
  }
  for (const auto& [name, col] : d.aux) {
    Eigen::VectorXd c(m);
    for (Eigen::Index i = 0; i < m; ++i) c(i) = col(rows[i]);
    out.aux[name] = std::move(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear functional m
// ---------------------------------------------------------------------------

// Batched function handle: rows of S-space in, values out.
using FunctionHandle = std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>;
// Dictionary evaluator: rows in, one column per basis function out.
using DesignFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

inline FunctionHandle to_handle(const FittedFunction& f) {
  return [f](const Eigen::MatrixXd& x) { return f.evaluate(x); };
}

// The target functional theta = E[m(W; h)], supplied as a per-observation
// evaluator over function handles rather than as an explicit Riesz
// representer. dictionary_means produces the vector m_bar_j = E_n[m(W_i; b_j)]
// over a whole basis at once; the generic fallback loops eval_all over
// columns, and structured functionals override it with a closed form.
struct LinearFunctionalSpec {
  std::string kind;
  nlohmann::json params;
  std::function<Eigen::VectorXd(const FunctionHandle&, const Dataset&)> eval_all;
  std::function<Eigen::VectorXd(const DesignFn&, const Dataset&)> dictionary_means;

  Eigen::VectorXd values(const FittedFunction& f, const Dataset& d) const {
    return eval_all(to_handle(f), d);
  }
};

namespace detail {

inline auto generic_dictionary_means(
    const std::function<Eigen::VectorXd(const FunctionHandle&, const Dataset&)>& eval_all) {
  return [eval_all](const DesignFn& design, const Dataset& d) {
    const Eigen::Index p = design(d.s.topRows(1)).cols();
    Eigen::VectorXd mbar(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      FunctionHandle basis_j = [&design, j](const Eigen::MatrixXd& x) {
        return design(x).col(j).eval();
      };
      mbar(j) = eval_all(basis_j, d).mean();
    }
    return mbar;
  };
}

}  // namespace detail

// m(W; h) = (h(S + eps) - h(S - eps)) / (2 eps), the arithmetic approximation
// to the average derivative. Scalar S only.
inline LinearFunctionalSpec make_avg_finite_difference(double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  LinearFunctionalSpec m;
  m.kind = "avg_finite_difference";
  m.params = {{"eps", eps}};
  m.eval_all = [eps](const FunctionHandle& f, const Dataset& d) {
    if (d.s.cols() != 1)
      throw std::invalid_argument("avg_finite_difference requires scalar S");
    const Eigen::MatrixXd up = d.s.array() + eps;
    const Eigen::MatrixXd dn = d.s.array() - eps;
    return ((f(up) - f(dn)) / (2.0 * eps)).eval();
  };
  m.dictionary_means = [eps](const DesignFn& design, const Dataset& d) {
    if (d.s.cols() != 1)
      throw std::invalid_argument("avg_finite_difference requires scalar S");
    const Eigen::MatrixXd up = d.s.array() + eps;
    const Eigen::MatrixXd dn = d.s.array() - eps;
    return (((design(up) - design(dn)) / (2.0 * eps)).colwise().mean()).transpose().eval();
  };
  return m;
}

// m(W; h) = h(S), so theta = E[h(S)].
inline LinearFunctionalSpec make_mean_functional() {
  LinearFunctionalSpec m;
  m.kind = "mean";
  m.eval_all = [](const FunctionHandle& f, const Dataset& d) { return f(d.s); };
  m.dictionary_means = [](const DesignFn& design, const Dataset& d) {
    return design(d.s).colwise().mean().transpose().eval();
  };
  return m;
}

// m(W; h) = w(W) h(S) with the per-observation weight stored as an aux column
// (a sampled Riesz-representer weighting).
inline LinearFunctionalSpec make_aux_weighted_eval(const std::string& aux_name) {
  LinearFunctionalSpec m;
  m.kind = "aux_weighted_eval";
  m.params = {{"aux", aux_name}};
  m.eval_all = [aux_name](const FunctionHandle& f, const Dataset& d) {
    return (d.aux.at(aux_name).array() * f(d.s).array()).matrix().eval();
  };
  m.dictionary_means = [aux_name](const DesignFn& design, const Dataset& d) {
    const Eigen::VectorXd& w = d.aux.at(aux_name);
    return (design(d.s).transpose() * w / static_cast<double>(d.n())).eval();
  };
  return m;
}

// m_i(W; h) = theta_i for partially linear h = (theta, g): realized as a unit
// finite difference along coordinate `index`, which is exact on the partially
// linear class and linear in h everywhere.
inline LinearFunctionalSpec make_coefficient_selector(int index, int d_a) {
  if (index < 0 || index >= d_a) throw std::invalid_argument("coefficient index out of range");
  LinearFunctionalSpec m;
  m.kind = "coefficient_selector";
  m.params = {{"index", index}, {"d_a", d_a}};
  m.eval_all = [index](const FunctionHandle& f, const Dataset& d) {
    Eigen::MatrixXd shifted = d.s;
    shifted.col(index).array() += 1.0;
    return (f(shifted) - f(d.s)).eval();
  };
  m.dictionary_means = [index](const DesignFn& design, const Dataset& d) {
    Eigen::MatrixXd shifted = d.s;
    shifted.col(index).array() += 1.0;
    return ((design(shifted) - design(d.s)).colwise().mean()).transpose().eval();
  };
  return m;
}

// ---------------------------------------------------------------------------
// MomentProblem and the core moment operations
// ---------------------------------------------------------------------------

struct MomentProblem {
  Dataset data;
  LinearFunctionalSpec functional;
};

inline void validate_problem(const MomentProblem& p) {
  const auto v = validate_dataset(p.data);
  if (!v.empty()) throw std::invalid_argument("invalid dataset: " + v.front());
  if (!p.functional.eval_all) throw std::invalid_argument("functional evaluator missing");
  FunctionHandle zero = [](const Eigen::MatrixXd& x) {
    return Eigen::VectorXd::Zero(x.rows()).eval();
  };
  const Eigen::VectorXd vals = p.functional.eval_all(zero, p.data);
  if (vals.size() != p.data.n() || !vals.allFinite())
    throw std::invalid_argument("functional evaluator not total on the dataset");
}

// Per-observation moment slack r_i = g2_i - g1_i h(S_i).
inline Eigen::VectorXd residual(const FunctionHandle& h, const Dataset& d) {
  const Eigen::VectorXd hv = h(d.s);
  if (hv.size() != d.n()) throw std::invalid_argument("residual: h evaluation size mismatch");
  return d.g2 - d.g1.cwiseProduct(hv);
}

inline Eigen::VectorXd residual(const FittedFunction& h, const Dataset& d) {
  return residual(to_handle(h), d);
}

// Empirical analogue of theta: (1/n) sum_i m(W_i; h).
inline double functional_mean(const LinearFunctionalSpec& m, const FunctionHandle& h,
                              const Dataset& d) {
  return m.eval_all(h, d).mean();
}

inline double functional_mean(const LinearFunctionalSpec& m, const FittedFunction& h,
                              const Dataset& d) {
  return functional_mean(m, to_handle(h), d);
}

// ---------------------------------------------------------------------------
// CSV loading (header + sidecar mapping)
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::MatrixXd pick_columns(const io::CsvTable& t, const nlohmann::json& names) {
  std::vector<std::string> cols;
  if (names.is_string())
    cols.push_back(names.get<std::string>());
  else
    cols = names.get<std::vector<std::string>>();
  Eigen::MatrixXd out(t.values.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    out.col(static_cast<Eigen::Index>(j)) = t.values.col(t.column(cols[j]));
  return out;
}

}  // namespace detail

// Mapping sidecar, JSON:
//   {"s": ["x"], "t": ["z"], "g1": "g1col" | <number>, "g2": "y",
//    "aux": {"name": "col", ...},
//    "functional": {"kind": "avg_finite_difference", "eps": 0.1}}
// g1 given as a number means the constant column (the NPIV case g1 = 1).
inline Dataset load_dataset_csv(const std::string& csv_path, const nlohmann::json& mapping) {
  const io::CsvTable t = io::read_csv(csv_path);
  Dataset d;
  d.s = detail::pick_columns(t, mapping.at("s"));
  d.t = detail::pick_columns(t, mapping.at("t"));
  const auto& g1 = mapping.at("g1");
  if (g1.is_number())
    d.g1 = Eigen::VectorXd::Constant(t.values.rows(), g1.get<double>());
  else
    d.g1 = t.values.col(t.column(g1.get<std::string>()));
  d.g2 = t.values.col(t.column(mapping.at("g2").get<std::string>()));
  if (mapping.contains("aux"))
    for (const auto& [name, col] : mapping.at("aux").items())
      d.aux[name] = t.values.col(t.column(col.get<std::string>()));
  return d;
}

inline LinearFunctionalSpec functional_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind");
  if (kind == "avg_finite_difference") return make_avg_finite_difference(j.at("eps"));
  if (kind == "mean") return make_mean_functional();
  if (kind == "aux_weighted_eval") return make_aux_weighted_eval(j.at("aux"));
  if (kind == "coefficient_selector")
    return make_coefficient_selector(j.at("index"), j.at("d_a"));
  throw std::invalid_argument("unknown functional kind '" + kind + "'");
}

inline MomentProblem load_problem_csv(const std::string& csv_path,
                                      const nlohmann::json& mapping) {
  MomentProblem p{load_dataset_csv(csv_path, mapping),
                  functional_from_json(mapping.at("functional"))};
  validate_problem(p);
  return p;
}

}  // namespace strongid
