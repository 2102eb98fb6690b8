// Softmax predictors (linear or one-hidden-layer ReLU MLP) trained with
// cross-entropy plus a scaled negative-entropy confidence penalty.

#ifndef LABELSHIFT_PREDICTOR_HPP
#define LABELSHIFT_PREDICTOR_HPP

#include "labelshift/rng.hpp"
#include "labelshift/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace labelshift {

struct Architecture {
  enum class Kind { kLinear, kMlp };
  Kind kind = Kind::kLinear;
  std::size_t hidden = 0;

  static Architecture linear() { return {Kind::kLinear, 0}; }
  static Architecture mlp(std::size_t hidden_units) { return {Kind::kMlp, hidden_units}; }

  std::size_t parameter_count(std::size_t m, std::size_t d) const {
    if (kind == Kind::kLinear) return m * d + m;
    return hidden * d + hidden + m * hidden + m;
  }

  bool operator==(const Architecture&) const = default;
};

/// What the entropy penalty is evaluated on. kSoftmaxOfProbs applies the
/// softmax to the predictor's probability output (p -> softmax(p)), a mild
/// penalty bounded by the entropy range of softmax over the simplex.
/// kSoftmaxOfLogits penalizes the output distribution softmax(z) directly.
enum class PenaltyInput { kSoftmaxOfProbs, kSoftmaxOfLogits };

struct PredictorConfig {
  Architecture architecture = Architecture::linear();
  double learning_rate = 0.1;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 100;
  // Training stops once the mean cross-entropy over the training set drops
  // below this value.
  double loss_threshold = 0.05;
  double zeta = 1.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  PenaltyInput penalty_input = PenaltyInput::kSoftmaxOfProbs;

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning_rate must be positive");
    if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
    if (!(zeta >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "zeta must be >= 0");
    if (!(weight_decay >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "weight_decay must be >= 0");
    if (!(loss_threshold >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "loss_threshold must be >= 0");
    if (architecture.kind == Architecture::Kind::kMlp && architecture.hidden == 0)
      throw Error(ErrorCode::kInvalidArgument, "mlp needs hidden_units >= 1");
  }
};

/// Sum_c p_c log p_c with the probability floor; the negative Shannon entropy.
inline double entropy_penalty(std::span<const double> p) {
  double acc = 0.0;
  for (double pc : p) acc += pc * std::log(std::max(pc, kProbFloor));
  return acc;
}

inline double entropy_penalty(const Vector& p) { return entropy_penalty(std::span<const double>(p.data(), static_cast<std::size_t>(p.size()))); }

class Predictor {
 public:
  Predictor(Architecture arch, std::size_t m, std::size_t d, Vector theta)
      : arch_(arch), m_(m), d_(d), theta_(std::move(theta)) {
    if (m_ < 2 || d_ < 1) throw Error(ErrorCode::kInvalidArgument, "predictor needs m >= 2 and d >= 1");
    if (static_cast<std::size_t>(theta_.size()) != arch_.parameter_count(m_, d_))
      throw Error(ErrorCode::kDimensionMismatch, "parameter count does not match architecture");
    if (!theta_.allFinite()) throw Error(ErrorCode::kInvalidArgument, "non-finite predictor parameter");
  }

  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer, biases included.
  static Predictor initialize(Architecture arch, std::size_t m, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    Vector theta(static_cast<Eigen::Index>(arch.parameter_count(m, d)));
    Eigen::Index at = 0;
    auto fill = [&](std::size_t count, std::size_t fan_in) {
      double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (std::size_t i = 0; i < count; ++i) theta[at++] = u(rng);
    };
    if (arch.kind == Architecture::Kind::kLinear) {
      fill(m * d + m, d);
    } else {
      fill(arch.hidden * d + arch.hidden, d);
      fill(m * arch.hidden + m, arch.hidden);
    }
    return Predictor(arch, m, d, std::move(theta));
  }

  static Predictor zeros(Architecture arch, std::size_t m, std::size_t d) {
    return Predictor(arch, m, d, Vector::Zero(static_cast<Eigen::Index>(arch.parameter_count(m, d))));
  }

  const Architecture& architecture() const noexcept { return arch_; }
  std::size_t classes() const noexcept { return m_; }
  std::size_t dim() const noexcept { return d_; }
  const Vector& parameters() const noexcept { return theta_; }
  Predictor with_parameters(Vector theta) const { return Predictor(arch_, m_, d_, std::move(theta)); }

  Matrix logits(const Matrix& x) const {
    check_dim(x);
    if (arch_.kind == Architecture::Kind::kLinear) {
      auto [w, b] = layer(0, m_, d_);
      return (x * w.transpose()).rowwise() + b.transpose();
    }
    auto [w1, b1] = layer(0, arch_.hidden, d_);
    auto [w2, b2] = layer(arch_.hidden * d_ + arch_.hidden, m_, arch_.hidden);
    Matrix h = ((x * w1.transpose()).rowwise() + b1.transpose()).cwiseMax(0.0);
    return (h * w2.transpose()).rowwise() + b2.transpose();
  }

  struct LossGrad {
    double loss = 0.0;  // mean of weight * (CE + zeta * penalty)
    double cross_entropy = 0.0;  // unweighted mean CE
    Vector grad;
  };

  /// Loss and analytic gradient over a batch. `weights`, when nonempty,
  /// scales each sample's loss; the mean still divides by the batch size.
  LossGrad loss_and_gradient(const Matrix& x, std::span<const int> y, double zeta,
                             std::span<const double> weights = {},
                             PenaltyInput penalty = PenaltyInput::kSoftmaxOfProbs) const {
    check_dim(x);
    const Eigen::Index n = x.rows();
    if (n == 0 || static_cast<std::size_t>(n) != y.size())
      throw Error(ErrorCode::kDimensionMismatch, "batch features and labels disagree");
    if (!weights.empty() && weights.size() != y.size())
      throw Error(ErrorCode::kDimensionMismatch, "sample weight count differs from batch size");

    Matrix hidden;
    Matrix z;
    if (arch_.kind == Architecture::Kind::kLinear) {
      z = logits(x);
    } else {
      auto [w1, b1] = layer(0, arch_.hidden, d_);
      auto [w2, b2] = layer(arch_.hidden * d_ + arch_.hidden, m_, arch_.hidden);
      hidden = ((x * w1.transpose()).rowwise() + b1.transpose()).cwiseMax(0.0);
      z = (hidden * w2.transpose()).rowwise() + b2.transpose();
    }

    LossGrad out;
    Matrix dz(n, static_cast<Eigen::Index>(m_));
    const double inv_n = 1.0 / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double zmax = z.row(i).maxCoeff();
      double lse = zmax + std::log((z.row(i).array() - zmax).exp().sum());
      Eigen::RowVectorXd logp = z.row(i).array() - lse;
      Eigen::RowVectorXd p = logp.array().exp();
      const int yi = y[static_cast<std::size_t>(i)];
      double ce = -logp[yi];
      double s = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
      Eigen::RowVectorXd g = p;
      g[yi] -= 1.0;
      double omega = 0.0;
      if (zeta != 0.0) {
        if (penalty == PenaltyInput::kSoftmaxOfLogits) {
          omega = (p.array() * logp.array()).sum();
          g += zeta * (p.array() * (logp.array() - omega)).matrix();
        } else {
          // q = softmax(p); d omega / dp = q (log q - omega), then back
          // through p = softmax(z).
          double pmax = p.maxCoeff();
          double lse_p = pmax + std::log((p.array() - pmax).exp().sum());
          Eigen::RowVectorXd logq = p.array() - lse_p;
          Eigen::RowVectorXd q = logq.array().exp();
          omega = (q.array() * logq.array()).sum();
          Eigen::RowVectorXd dp = q.array() * (logq.array() - omega);
          g += zeta * (p.array() * (dp.array() - p.dot(dp))).matrix();
        }
      }
      out.cross_entropy += ce * inv_n;
      out.loss += s * (ce + zeta * omega) * inv_n;
      dz.row(i) = (s * inv_n) * g;
    }

    out.grad = Vector::Zero(theta_.size());
    if (arch_.kind == Architecture::Kind::kLinear) {
      write_layer_grad(out.grad, 0, dz.transpose() * x, dz.colwise().sum().transpose());
    } else {
      auto [w2, b2] = layer(arch_.hidden * d_ + arch_.hidden, m_, arch_.hidden);
      Matrix dh = dz * w2;
      dh = dh.cwiseProduct((hidden.array() > 0.0).cast<double>().matrix());
      write_layer_grad(out.grad, 0, dh.transpose() * x, dh.colwise().sum().transpose());
      write_layer_grad(out.grad, arch_.hidden * d_ + arch_.hidden, dz.transpose() * hidden,
                       dz.colwise().sum().transpose());
    }
    return out;
  }

 private:
  using ConstMap = Eigen::Map<const Matrix>;

  std::pair<ConstMap, Eigen::Map<const Vector>> layer(std::size_t offset, std::size_t rows, std::size_t cols) const {
    const double* base = theta_.data() + offset;
    return {ConstMap(base, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)),
            Eigen::Map<const Vector>(base + rows * cols, static_cast<Eigen::Index>(rows))};
  }

  static void write_layer_grad(Vector& grad, std::size_t offset, const Matrix& dw, const Vector& db) {
    Eigen::Map<Matrix>(grad.data() + offset, dw.rows(), dw.cols()) = dw;
    grad.segment(static_cast<Eigen::Index>(offset) + dw.size(), db.size()) = db;
  }

  void check_dim(const Matrix& x) const {
    if (static_cast<std::size_t>(x.cols()) != d_)
      throw Error(ErrorCode::kDimensionMismatch,
                  "feature dimension " + std::to_string(x.cols()) + " differs from predictor dimension " +
                      std::to_string(d_));
  }

  Architecture arch_;
  std::size_t m_;
  std::size_t d_;
  Vector theta_;
};

/// Mean over the batch of CE + zeta * entropy penalty.
inline double regularized_loss(const Predictor& pred, const LabeledDataset& batch, double zeta,
                               PenaltyInput penalty = PenaltyInput::kSoftmaxOfProbs) {
  return pred.loss_and_gradient(batch.features(), batch.labels(), zeta, {}, penalty).loss;
}

/// Softmax outputs with the probability floor applied and rows renormalized.
inline ProbabilityMatrix predict_proba(const Predictor& pred, const Matrix& features) {
  Matrix z = pred.logits(features);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    double zmax = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - zmax).exp();
    z.row(i) /= z.row(i).sum();
  }
  return ProbabilityMatrix::floored(std::move(z));
}

/// Mean Shannon entropy of the rows.
inline double mean_entropy(const ProbabilityMatrix& probs) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.rows().rows(); ++i) {
    Vector row = probs.rows().row(i).transpose();
    acc -= entropy_penalty(row);
  }
  return acc / static_cast<double>(probs.size());
}

/// Top-1 accuracy of the predictor on a labeled set.
inline double accuracy(const Predictor& pred, const LabeledDataset& data) {
  Matrix z = pred.logits(data.features());
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index arg;
    z.row(i).maxCoeff(&arg);
    if (arg == data.labels()[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

struct TrainStats {
  std::size_t epochs_run = 0;
  double final_cross_entropy = 0.0;
};

/// Mini-batch SGD with optional weight decay on the regularized loss.
inline Predictor train_predictor(const LabeledDataset& train, const PredictorConfig& cfg, TrainStats* stats = nullptr) {
  cfg.validate();
  Predictor pred = Predictor::initialize(cfg.architecture, train.classes(), train.dim(), cfg.seed);
  if (stats) *stats = {};
  if (cfg.max_epochs == 0) return pred;

  Rng shuffle_rng(derive_seed(cfg.seed, {0x5348554646ULL}));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Vector theta = pred.parameters();
  const std::size_t batch = std::min(cfg.batch_size, train.size());
  Matrix xb;
  std::vector<int> yb;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t len = std::min(batch, order.size() - start);
      xb.resize(static_cast<Eigen::Index>(len), train.features().cols());
      yb.resize(len);
      for (std::size_t i = 0; i < len; ++i) {
        xb.row(static_cast<Eigen::Index>(i)) = train.features().row(static_cast<Eigen::Index>(order[start + i]));
        yb[i] = train.labels()[order[start + i]];
      }
      auto lg = pred.loss_and_gradient(xb, yb, cfg.zeta, {}, cfg.penalty_input);
      if (!std::isfinite(lg.loss) || !lg.grad.allFinite())
        throw Error(ErrorCode::kDiverged, "diverged at epoch " + std::to_string(epoch));
      if (cfg.weight_decay > 0.0) lg.grad += cfg.weight_decay * theta;
      theta -= cfg.learning_rate * lg.grad;
      if (!theta.allFinite()) throw Error(ErrorCode::kDiverged, "diverged at epoch " + std::to_string(epoch));
      pred = pred.with_parameters(theta);
    }
    auto full = pred.loss_and_gradient(train.features(), train.labels(), cfg.zeta, {}, cfg.penalty_input);
    if (!std::isfinite(full.loss)) throw Error(ErrorCode::kDiverged, "diverged at epoch " + std::to_string(epoch));
    if (stats) *stats = {epoch + 1, full.cross_entropy};
    if (full.cross_entropy < cfg.loss_threshold) break;
  }
  return pred;
}

}  // namespace labelshift

#endif  // LABELSHIFT_PREDICTOR_HPP
