// Density-ratio estimators for label shift.
//
// Maximum-likelihood estimators (EM and projected gradient ascent) maximize
// the mean log of f(x)^T r over unlabeled test predictions, subject to
// r >= 0 and sum_c r_c p_tr(c) = 1. Confusion-matrix estimators (BBSE and
// its ridge-regularized variant) solve a linear system built from hard
// predictions. VRLS composes the entropy-regularized predictor with an MLE
// solver.

#ifndef LABELSHIFT_ESTIMATORS_HPP
#define LABELSHIFT_ESTIMATORS_HPP

#include "labelshift/predictor.hpp"
#include "labelshift/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace labelshift {

enum class Method { kBbse, kRlls, kMllsEm, kMllsGd };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::kBbse: return "bbse";
    case Method::kRlls: return "rlls";
    case Method::kMllsEm: return "mlls_em";
    case Method::kMllsGd: return "mlls_gd";
  }
  return "unknown";
}

inline Method method_from_string(std::string_view s) {
  if (s == "bbse") return Method::kBbse;
  if (s == "rlls") return Method::kRlls;
  if (s == "mlls_em") return Method::kMllsEm;
  if (s == "mlls_gd") return Method::kMllsGd;
  throw Error(ErrorCode::kInvalidArgument, "unknown estimator method: " + std::string(s));
}

struct EstimatorOptions {
  Method method = Method::kMllsEm;
  std::size_t max_iters = 1000;
  double tol = 1e-6;  // on the L-infinity change of r between iterates
  double step_size = 0.05;
  double rlls_lambda = 0.0;
  bool record_trace = false;

  void validate() const {
    if (max_iters < 1) throw Error(ErrorCode::kInvalidArgument, "max_iters must be >= 1");
    if (!(tol > 0.0)) throw Error(ErrorCode::kInvalidArgument, "tol must be positive");
    if (!(step_size > 0.0)) throw Error(ErrorCode::kInvalidArgument, "step_size must be positive");
    if (!(rlls_lambda >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "rlls_lambda must be >= 0");
  }
};

struct EstimateReport {
  RatioVector ratio;
  std::size_t iterations_used = 0;
  double final_objective = 0.0;
  bool converged = false;
  // Objective at every iterate, starting from the initial point; filled
  // only when EstimatorOptions::record_trace is set.
  std::vector<double> objective_trace;
};

/// Mean over rows of log(max(row^T r, floor)).
inline double empirical_objective(const Vector& r, const ProbabilityMatrix& preds) {
  if (static_cast<std::size_t>(r.size()) != preds.classes())
    throw Error(ErrorCode::kDimensionMismatch, "ratio length differs from prediction width");
  Vector dots = preds.rows() * r;
  double acc = 0.0;
  for (Eigen::Index j = 0; j < dots.size(); ++j) acc += std::log(std::max(dots[j], kProbFloor));
  return acc / static_cast<double>(dots.size());
}

inline double empirical_objective(const RatioVector& r, const ProbabilityMatrix& preds) {
  return empirical_objective(r.ratios(), preds);
}

/// Gradient in r: mean over rows of row / (row^T r). Rows whose dot product
/// sits at the floor contribute nothing, matching the flat floored log.
inline Vector objective_gradient(const Vector& r, const ProbabilityMatrix& preds) {
  Vector dots = preds.rows() * r;
  Vector inv = Vector::Zero(dots.size());
  for (Eigen::Index j = 0; j < dots.size(); ++j)
    if (dots[j] > kProbFloor) inv[j] = 1.0 / dots[j];
  return preds.rows().transpose() * inv / static_cast<double>(dots.size());
}

namespace detail {

inline void check_mle_inputs(const ProbabilityMatrix& preds, const LabelMarginal& tr) {
  if (preds.classes() != tr.classes()) throw Error(ErrorCode::kDimensionMismatch, "prediction width differs from class count");
}

/// Euclidean projection onto {q >= 0, sum q = 1} restricted to `support`.
inline Vector project_simplex(const Vector& v, const std::vector<bool>& support) {
  std::vector<double> vals;
  for (Eigen::Index c = 0; c < v.size(); ++c)
    if (support[static_cast<std::size_t>(c)]) vals.push_back(v[c]);
  std::sort(vals.begin(), vals.end(), std::greater<>());
  double cumsum = 0.0;
  double shift = 0.0;
  for (std::size_t k = 0; k < vals.size(); ++k) {
    cumsum += vals[k];
    double t = (cumsum - 1.0) / static_cast<double>(k + 1);
    if (vals[k] - t > 0.0) shift = t;
  }
  Vector out = Vector::Zero(v.size());
  for (Eigen::Index c = 0; c < v.size(); ++c)
    if (support[static_cast<std::size_t>(c)]) out[c] = std::max(v[c] - shift, 0.0);
  return out;
}

inline std::vector<bool> support_of(const LabelMarginal& tr) {
  std::vector<bool> s(tr.classes());
  for (std::size_t c = 0; c < tr.classes(); ++c) s[c] = tr[c] > 0.0;
  return s;
}

inline Vector q_to_r(const Vector& q, const LabelMarginal& tr) {
  Vector r = Vector::Zero(q.size());
  for (Eigen::Index c = 0; c < q.size(); ++c)
    if (tr[static_cast<std::size_t>(c)] > 0.0) r[c] = q[c] / tr[static_cast<std::size_t>(c)];
  return r;
}

}  // namespace detail

/// EM for the MLE: E-step reweights each row by q/tr, M-step averages the
/// posteriors. Starts from q = tr (r = 1). Classes with tr_c = 0 are held at
/// ratio 0.
inline EstimateReport estimate_mlls_em(const ProbabilityMatrix& preds, const LabelMarginal& tr,
                                       const EstimatorOptions& opts = {}) {
  opts.validate();
  detail::check_mle_inputs(preds, tr);
  const auto support = detail::support_of(tr);
  const Matrix& p = preds.rows();
  const Eigen::Index m = p.cols();

  Vector r = detail::q_to_r(tr.probs(), tr);
  std::vector<double> trace;
  if (opts.record_trace) trace.push_back(empirical_objective(r, preds));

  std::size_t iters = 0;
  bool converged = false;
  Vector weighted(m);
  while (iters < opts.max_iters) {
    Vector q_next = Vector::Zero(m);
    for (Eigen::Index j = 0; j < p.rows(); ++j) {
      weighted = p.row(j).transpose().cwiseProduct(r);
      double norm = weighted.sum();
      if (norm > 0.0) q_next += weighted / norm;
    }
    q_next /= static_cast<double>(p.rows());
    Vector r_next = detail::q_to_r(q_next, tr);
    ++iters;
    double change = (r_next - r).cwiseAbs().maxCoeff();
    r = std::move(r_next);
    if (opts.record_trace) trace.push_back(empirical_objective(r, preds));
    if (change < opts.tol) {
      converged = true;
      break;
    }
  }
  RatioVector ratio = RatioVector::project_feasible(r, tr);
  double obj = empirical_objective(ratio, preds);
  return {std::move(ratio), iters, obj, converged, std::move(trace)};
}

/// Projected gradient ascent on the same objective. Iterates live in
/// q = r ⊙ tr; each step moves along the q-gradient (the r-gradient divided
/// by tr), projects onto the simplex, and halves the step while the
/// objective would decrease.
inline EstimateReport estimate_mlls_gd(const ProbabilityMatrix& preds, const LabelMarginal& tr,
                                       const EstimatorOptions& opts = {}) {
  opts.validate();
  detail::check_mle_inputs(preds, tr);
  const auto support = detail::support_of(tr);
  Vector q = tr.probs();
  Vector r = detail::q_to_r(q, tr);
  double obj = empirical_objective(r, preds);
  if (!std::isfinite(obj)) throw Error(ErrorCode::kDiverged, "diverged: non-finite objective at start");
  std::vector<double> trace;
  if (opts.record_trace) trace.push_back(obj);

  std::size_t iters = 0;
  bool converged = false;
  while (iters < opts.max_iters) {
    Vector grad_q = detail::q_to_r(objective_gradient(r, preds), tr);
    double step = opts.step_size;
    Vector r_next;
    double obj_next = obj;
    bool moved = false;
    for (int halvings = 0; halvings < 60; ++halvings) {
      Vector q_try = detail::project_simplex(q + step * grad_q, support);
      r_next = detail::q_to_r(q_try, tr);
      obj_next = empirical_objective(r_next, preds);
      if (!std::isfinite(obj_next))
        throw Error(ErrorCode::kDiverged, "diverged: non-finite objective at iteration " + std::to_string(iters));
      if (obj_next >= obj) {
        q = std::move(q_try);
        moved = true;
        break;
      }
      step *= 0.5;
    }
    ++iters;
    if (!moved) {
      // No ascent direction at any step size: r is stationary to precision.
      converged = true;
      break;
    }
    double change = (r_next - r).cwiseAbs().maxCoeff();
    r = std::move(r_next);
    obj = obj_next;
    if (opts.record_trace) trace.push_back(obj);
    if (change < opts.tol && step == opts.step_size) {
      converged = true;
      break;
    }
  }
  RatioVector ratio = RatioVector::project_feasible(r, tr);
  double final_obj = empirical_objective(ratio, preds);
  return {std::move(ratio), iters, final_obj, converged, std::move(trace)};
}

namespace detail {

struct ConfusionSystem {
  Matrix a;  // a(j, c) = P(zhat = j, y = c) on the holdout
  Vector b;  // b(j) = P(zhat = j) on the test set
};

inline ConfusionSystem build_confusion_system(const ProbabilityMatrix& preds_val, std::span<const int> labels_val,
                                              const ProbabilityMatrix& preds_te, const LabelMarginal& tr) {
  const std::size_t m = tr.classes();
  if (preds_val.classes() != m || preds_te.classes() != m)
    throw Error(ErrorCode::kDimensionMismatch, "prediction width differs from class count");
  if (labels_val.empty() || labels_val.size() != preds_val.size())
    throw Error(ErrorCode::kDimensionMismatch, "holdout predictions and labels disagree");
  ConfusionSystem sys{Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m)),
                      Vector::Zero(static_cast<Eigen::Index>(m))};
  std::vector<bool> seen(m, false);
  auto zval = preds_val.hard_labels();
  for (std::size_t i = 0; i < labels_val.size(); ++i) {
    int y = labels_val[i];
    if (y < 0 || static_cast<std::size_t>(y) >= m) throw Error(ErrorCode::kInvalidArgument, "holdout label out of range");
    seen[static_cast<std::size_t>(y)] = true;
    sys.a(zval[i], y) += 1.0;
  }
  for (std::size_t c = 0; c < m; ++c)
    if (!seen[c]) throw Error(ErrorCode::kUnsupportedClass, "unsupported class " + std::to_string(c) + " absent from holdout");
  sys.a /= static_cast<double>(labels_val.size());
  for (int z : preds_te.hard_labels()) sys.b[z] += 1.0;
  sys.b /= static_cast<double>(preds_te.size());

  Eigen::JacobiSVD<Matrix> svd(sys.a);
  const auto& sv = svd.singularValues();
  double smin = sv[sv.size() - 1];
  if (!(smin > 0.0) || sv[0] / smin > 1e12)
    throw Error(ErrorCode::kIllConditioned, "ill-conditioned confusion matrix");
  return sys;
}

}  // namespace detail

/// Black-box shift estimation: solve A w = B, clip negatives, renormalize.
inline EstimateReport estimate_bbse(const ProbabilityMatrix& preds_val, std::span<const int> labels_val,
                                    const ProbabilityMatrix& preds_te, const LabelMarginal& tr) {
  auto sys = detail::build_confusion_system(preds_val, labels_val, preds_te, tr);
  Vector w = sys.a.fullPivLu().solve(sys.b);
  RatioVector ratio = RatioVector::project_feasible(w, tr);
  double obj = empirical_objective(ratio, preds_te);
  return {std::move(ratio), 1, obj, true, {}};
}

/// Ridge-regularized confusion-matrix estimate: theta = r - 1 solves
/// (A^T A + lambda I) theta = A^T (B - A 1).
inline EstimateReport estimate_rlls(const ProbabilityMatrix& preds_val, std::span<const int> labels_val,
                                    const ProbabilityMatrix& preds_te, const LabelMarginal& tr, double lambda) {
  if (!(lambda >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "rlls lambda must be >= 0");
  auto sys = detail::build_confusion_system(preds_val, labels_val, preds_te, tr);
  const Eigen::Index m = sys.a.rows();
  Vector ones = Vector::Ones(m);
  Matrix normal = sys.a.transpose() * sys.a + lambda * Matrix::Identity(m, m);
  Vector rhs = sys.a.transpose() * (sys.b - sys.a * ones);
  Vector theta = normal.ldlt().solve(rhs);
  RatioVector ratio = RatioVector::project_feasible(ones + theta, tr);
  double obj = empirical_objective(ratio, preds_te);
  return {std::move(ratio), 1, obj, true, {}};
}

/// Runs the MLE solver selected by opts.method.
inline EstimateReport estimate_mlls(const ProbabilityMatrix& preds_te, const LabelMarginal& tr,
                                    const EstimatorOptions& opts) {
  switch (opts.method) {
    case Method::kMllsEm: return estimate_mlls_em(preds_te, tr, opts);
    case Method::kMllsGd: return estimate_mlls_gd(preds_te, tr, opts);
    default: throw Error(ErrorCode::kInvalidArgument, "MLE solver must be mlls_em or mlls_gd");
  }
}

/// Trains the entropy-regularized predictor on labeled training data, applies
/// it to the unlabeled test features, and solves the MLE for the ratio.
/// With pcfg.zeta = 0 this is plain MLLS with an unregularized predictor.
inline EstimateReport estimate_vrls(const LabeledDataset& train, const Matrix& test_features,
                                    const PredictorConfig& pcfg, const EstimatorOptions& opts = {}) {
  Predictor pred = train_predictor(train, pcfg);
  return estimate_mlls(predict_proba(pred, test_features), train.empirical_marginal(), opts);
}

}  // namespace labelshift

#endif  // LABELSHIFT_ESTIMATORS_HPP
