// Shared domain types for label-shift estimation.
//
// Every type validates its invariants on construction and is immutable
// afterwards, so values can be shared freely between worker threads.

#ifndef LABELSHIFT_TYPES_HPP
#define LABELSHIFT_TYPES_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace labelshift {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Floor applied to probabilities before they enter a logarithm.
inline constexpr double kProbFloor = 1e-12;

enum class ErrorCode {
  kInvalidArgument,
  kEmptyDistribution,
  kUnsupportedClass,
  kIllConditioned,
  kDiverged,
  kDimensionMismatch,
  kScenarioMismatch,
  kIdxBadMagic,
  kIdxTruncated,
  kIdxCountMismatch,
  kIdxLabelRange,
  kIo,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// A point on the m-class probability simplex.
class LabelMarginal {
 public:
  explicit LabelMarginal(Vector probs) : probs_(std::move(probs)) {
    if (probs_.size() < 2) throw Error(ErrorCode::kInvalidArgument, "marginal needs at least 2 classes");
    for (Eigen::Index c = 0; c < probs_.size(); ++c) {
      if (!std::isfinite(probs_[c]) || probs_[c] < 0.0)
        throw Error(ErrorCode::kInvalidArgument, "marginal entries must be finite and nonnegative");
    }
    if (std::abs(probs_.sum() - 1.0) > 1e-9)
      throw Error(ErrorCode::kInvalidArgument, "marginal entries must sum to 1");
  }

  /// Normalizes a nonnegative vector onto the simplex.
  static LabelMarginal normalized(const Vector& weights) {
    double total = weights.sum();
    if (!(total > 0.0) || !std::isfinite(total)) throw Error(ErrorCode::kEmptyDistribution, "empty distribution");
    if ((weights.array() < 0.0).any()) throw Error(ErrorCode::kInvalidArgument, "negative weight");
    return LabelMarginal(weights / total);
  }

  static LabelMarginal uniform(std::size_t m) {
    return LabelMarginal(Vector::Constant(static_cast<Eigen::Index>(m), 1.0 / static_cast<double>(m)));
  }

  const Vector& probs() const noexcept { return probs_; }
  std::size_t classes() const noexcept { return static_cast<std::size_t>(probs_.size()); }
  double operator[](std::size_t c) const { return probs_[static_cast<Eigen::Index>(c)]; }

 private:
  Vector probs_;
};

/// Builds a marginal from per-class counts.
inline LabelMarginal make_marginal(std::span<const std::uint64_t> counts) {
  Vector w(static_cast<Eigen::Index>(counts.size()));
  double total = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    w[static_cast<Eigen::Index>(c)] = static_cast<double>(counts[c]);
    total += static_cast<double>(counts[c]);
  }
  if (total <= 0.0) throw Error(ErrorCode::kEmptyDistribution, "empty distribution");
  return LabelMarginal(w / total);
}

/// Nonnegative density ratio r with sum_c r_c * p_tr(c) = 1.
class RatioVector {
 public:
  RatioVector(Vector ratios, LabelMarginal train)
      : ratios_(std::move(ratios)), train_(std::move(train)) {
    if (static_cast<std::size_t>(ratios_.size()) != train_.classes())
      throw Error(ErrorCode::kDimensionMismatch, "ratio length differs from class count");
    if ((ratios_.array() < 0.0).any() || !ratios_.allFinite())
      throw Error(ErrorCode::kInvalidArgument, "ratios must be finite and nonnegative");
    if (std::abs(ratios_.dot(train_.probs()) - 1.0) > 1e-6)
      throw Error(ErrorCode::kInvalidArgument, "ratio is infeasible against the training marginal");
  }

  /// Clips negatives to zero and rescales onto the feasible set.
  static RatioVector project_feasible(const Vector& raw, const LabelMarginal& train) {
    Vector r = raw.cwiseMax(0.0);
    double mass = r.dot(train.probs());
    if (!(mass > 0.0) || !std::isfinite(mass))
      throw Error(ErrorCode::kInvalidArgument, "ratio has no feasible rescaling");
    return RatioVector(r / mass, train);
  }

  const Vector& ratios() const noexcept { return ratios_; }
  const LabelMarginal& train_marginal() const noexcept { return train_; }
  std::size_t classes() const noexcept { return static_cast<std::size_t>(ratios_.size()); }
  double operator[](std::size_t c) const { return ratios_[static_cast<Eigen::Index>(c)]; }

  /// The implied test marginal r ⊙ p_tr.
  LabelMarginal implied_test_marginal() const {
    return LabelMarginal::normalized(ratios_.cwiseProduct(train_.probs()));
  }

 private:
  Vector ratios_;
  LabelMarginal train_;
};

/// r_c = te_c / tr_c.
inline RatioVector ratio_from_marginals(const LabelMarginal& te, const LabelMarginal& tr) {
  if (te.classes() != tr.classes()) throw Error(ErrorCode::kDimensionMismatch, "class count mismatch");
  Vector r(static_cast<Eigen::Index>(te.classes()));
  for (std::size_t c = 0; c < te.classes(); ++c) {
    if (tr[c] == 0.0) {
      if (te[c] > 0.0) throw Error(ErrorCode::kUnsupportedClass, "unsupported class " + std::to_string(c));
      r[static_cast<Eigen::Index>(c)] = 0.0;
    } else {
      r[static_cast<Eigen::Index>(c)] = te[c] / tr[c];
    }
  }
  return RatioVector(std::move(r), tr);
}

/// Features (n x d) with integer labels in [0, m).
class LabeledDataset {
 public:
  LabeledDataset(Matrix features, std::vector<int> labels, std::size_t m)
      : features_(std::move(features)), labels_(std::move(labels)), m_(m) {
    if (labels_.empty()) throw Error(ErrorCode::kInvalidArgument, "dataset must contain at least one sample");
    if (static_cast<std::size_t>(features_.rows()) != labels_.size())
      throw Error(ErrorCode::kDimensionMismatch, "feature rows differ from label count");
    if (m_ < 2) throw Error(ErrorCode::kInvalidArgument, "dataset needs at least 2 classes");
    for (int y : labels_) {
      if (y < 0 || static_cast<std::size_t>(y) >= m_)
        throw Error(ErrorCode::kInvalidArgument, "label out of range: " + std::to_string(y));
    }
    if (!features_.allFinite()) throw Error(ErrorCode::kInvalidArgument, "non-finite feature value");
  }

  const Matrix& features() const noexcept { return features_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t classes() const noexcept { return m_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(features_.cols()); }

  std::vector<std::uint64_t> class_counts() const {
    std::vector<std::uint64_t> counts(m_, 0);
    for (int y : labels_) ++counts[static_cast<std::size_t>(y)];
    return counts;
  }

  LabelMarginal empirical_marginal() const {
    auto counts = class_counts();
    return make_marginal(counts);
  }

  LabeledDataset subset(std::span<const std::size_t> idx) const {
    Matrix x(static_cast<Eigen::Index>(idx.size()), features_.cols());
    std::vector<int> y(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = features_.row(static_cast<Eigen::Index>(idx[i]));
      y[i] = labels_[idx[i]];
    }
    return LabeledDataset(std::move(x), std::move(y), m_);
  }

 private:
  Matrix features_;
  std::vector<int> labels_;
  std::size_t m_;
};

/// Row-stochastic n x m matrix of predictor outputs.
class ProbabilityMatrix {
 public:
  explicit ProbabilityMatrix(Matrix rows) : rows_(std::move(rows)) {
    if (rows_.rows() < 1 || rows_.cols() < 2)
      throw Error(ErrorCode::kInvalidArgument, "probability matrix must be at least 1 x 2");
    for (Eigen::Index i = 0; i < rows_.rows(); ++i) {
      if ((rows_.row(i).array() < 0.0).any() || !rows_.row(i).allFinite())
        throw Error(ErrorCode::kInvalidArgument, "probability rows must be finite and nonnegative");
      if (std::abs(rows_.row(i).sum() - 1.0) > 1e-6)
        throw Error(ErrorCode::kInvalidArgument, "probability row " + std::to_string(i) + " does not sum to 1");
    }
  }

  /// Applies the floor kProbFloor to every entry, then renormalizes each row.
  static ProbabilityMatrix floored(Matrix rows) {
    rows = rows.cwiseMax(kProbFloor);
    for (Eigen::Index i = 0; i < rows.rows(); ++i) rows.row(i) /= rows.row(i).sum();
    return ProbabilityMatrix(std::move(rows));
  }

  const Matrix& rows() const noexcept { return rows_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(rows_.rows()); }
  std::size_t classes() const noexcept { return static_cast<std::size_t>(rows_.cols()); }

  /// Index of the most probable class for each row (first on ties).
  std::vector<int> hard_labels() const {
    std::vector<int> z(size());
    for (Eigen::Index i = 0; i < rows_.rows(); ++i) {
      Eigen::Index arg;
      rows_.row(i).maxCoeff(&arg);
      z[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    }
    return z;
  }

 private:
  Matrix rows_;
};

}  // namespace labelshift

#endif  // LABELSHIFT_TYPES_HPP
