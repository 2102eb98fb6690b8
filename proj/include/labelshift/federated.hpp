// Multi-node importance-weighted ERM under intra- and inter-node label shift.
//
// Each node estimates its own test label marginal from local data and
// publishes only that m-vector. Node k then weights its training loss by
//   w_k(y) = sum_j p_j^te(y) / p_k^tr(y),
// and a server aggregates per-node gradients of the weighted loss into one
// global model.

#ifndef LABELSHIFT_FEDERATED_HPP
#define LABELSHIFT_FEDERATED_HPP

#include "labelshift/data.hpp"
#include "labelshift/estimators.hpp"
#include "labelshift/predictor.hpp"
#include "labelshift/rng.hpp"
#include "labelshift/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace labelshift {

enum class Scenario { kNoLs, kLsSingle, kLsBoth, kLsMulti };
enum class Weighting { kNone, kTrueRatios, kEstimatedRatios };

inline std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::kNoLs: return "no_ls";
    case Scenario::kLsSingle: return "ls_single";
    case Scenario::kLsBoth: return "ls_both";
    case Scenario::kLsMulti: return "ls_multi";
  }
  return "unknown";
}

inline Scenario scenario_from_string(std::string_view s) {
  if (s == "no_ls") return Scenario::kNoLs;
  if (s == "ls_single") return Scenario::kLsSingle;
  if (s == "ls_both") return Scenario::kLsBoth;
  if (s == "ls_multi") return Scenario::kLsMulti;
  throw Error(ErrorCode::kInvalidArgument, "unknown scenario: " + std::string(s));
}

inline std::string_view to_string(Weighting w) {
  switch (w) {
    case Weighting::kNone: return "none";
    case Weighting::kTrueRatios: return "true_ratios";
    case Weighting::kEstimatedRatios: return "estimated_ratios";
  }
  return "unknown";
}

inline Weighting weighting_from_string(std::string_view s) {
  if (s == "none") return Weighting::kNone;
  if (s == "true_ratios") return Weighting::kTrueRatios;
  if (s == "estimated_ratios") return Weighting::kEstimatedRatios;
  throw Error(ErrorCode::kInvalidArgument, "unknown weighting: " + std::string(s));
}

struct ServerOptimizer {
  enum class Kind { kSgd, kAdam };
  Kind kind = Kind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct NodeSpec {
  LabelMarginal train_marginal;
  LabelMarginal test_marginal;
  std::size_t n_tr = 1000;
  std::size_t n_te = 1000;
  std::uint64_t seed = 0;
};

struct FederationConfig {
  std::vector<NodeSpec> nodes;
  Scenario scenario = Scenario::kLsMulti;
  std::size_t rounds = 300;
  std::size_t local_steps = 1;
  std::size_t nodes_per_round = 0;  // 0 means every node, every round
  ServerOptimizer server;
  Weighting weighting = Weighting::kEstimatedRatios;
  // Global model. learning_rate is the node-local step used when
  // local_steps > 1; batch_size is the per-node mini-batch.
  PredictorConfig global_model{Architecture::linear(), 0.1, 64, 0, 0.0, 0.0, 0.0, 0};
  // Node-local ratio estimation (VRLS).
  PredictorConfig local_predictor{Architecture::linear(), 0.1, 64, 50, 0.05, 1.0, 0.0, 0};
  EstimatorOptions local_estimator;
  // Divide the weights by K so they average to 1 under each node's
  // training marginal; only rescales the loss.
  bool normalize_weights = false;
  std::uint64_t seed = 0;

  std::size_t sampled_per_round() const { return nodes_per_round == 0 ? nodes.size() : nodes_per_round; }

  void validate() const {
    if (nodes.empty()) throw Error(ErrorCode::kInvalidArgument, "federation needs at least one node");
    if (rounds < 1) throw Error(ErrorCode::kInvalidArgument, "rounds must be >= 1");
    if (local_steps < 1) throw Error(ErrorCode::kInvalidArgument, "local_steps must be >= 1");
    if (sampled_per_round() > nodes.size())
      throw Error(ErrorCode::kInvalidArgument, "nodes_per_round exceeds node count");
    const std::size_t m = nodes.front().train_marginal.classes();
    for (const auto& n : nodes) {
      if (n.n_tr < 1 || n.n_te < 1) throw Error(ErrorCode::kInvalidArgument, "node sample counts must be >= 1");
      if (n.train_marginal.classes() != m || n.test_marginal.classes() != m)
        throw Error(ErrorCode::kDimensionMismatch, "node marginals disagree on class count");
    }
    if (!(server.lr > 0.0)) throw Error(ErrorCode::kInvalidArgument, "server lr must be positive");
    global_model.validate();
    local_predictor.validate();
    local_estimator.validate();
  }
};

namespace detail {

inline bool same_marginal(const LabelMarginal& a, const LabelMarginal& b) {
  return (a.probs() - b.probs()).cwiseAbs().maxCoeff() <= 1e-9;
}

}  // namespace detail

/// Checks that the configured marginals satisfy the scenario's equalities.
inline void validate_scenario(Scenario scenario, const std::vector<NodeSpec>& nodes) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kScenarioMismatch, what); };
  switch (scenario) {
    case Scenario::kNoLs:
      for (std::size_t k = 0; k < nodes.size(); ++k)
        if (!detail::same_marginal(nodes[k].train_marginal, nodes[k].test_marginal))
          fail("no_ls requires p_tr == p_te at node " + std::to_string(k));
      break;
    case Scenario::kLsSingle:
      if (detail::same_marginal(nodes[0].train_marginal, nodes[0].test_marginal))
        fail("ls_single requires p_tr != p_te at node 0");
      for (std::size_t k = 1; k < nodes.size(); ++k)
        if (!detail::same_marginal(nodes[k].train_marginal, nodes[k].test_marginal))
          fail("ls_single requires p_tr == p_te at node " + std::to_string(k));
      break;
    case Scenario::kLsBoth:
      if (nodes.size() != 2) fail("ls_both is defined for exactly 2 nodes");
      for (std::size_t k = 0; k < nodes.size(); ++k)
        if (detail::same_marginal(nodes[k].train_marginal, nodes[k].test_marginal))
          fail("ls_both requires p_tr != p_te at node " + std::to_string(k));
      break;
    case Scenario::kLsMulti:
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (detail::same_marginal(nodes[k].train_marginal, nodes[0].test_marginal))
          fail("ls_multi requires p_tr at node " + std::to_string(k) + " != p_te at node 0");
        if (detail::same_marginal(nodes[k].train_marginal, nodes[k].test_marginal))
          fail("ls_multi requires p_tr != p_te at node " + std::to_string(k));
      }
      break;
  }
}

/// Importance weights for node k: sum_j p_j^te(y) / p_k^tr(y), unnormalized, so
/// sum_y w(y) p_k^tr(y) = K. With `zero_unsupported`, classes absent from
/// node k's training data get weight 0 instead of raising; they never occur
/// in that node's loss.
inline Vector aggregate_ratios(std::size_t k, const std::vector<LabelMarginal>& test_marginals,
                               const LabelMarginal& tr_k, bool zero_unsupported = false) {
  if (test_marginals.empty()) throw Error(ErrorCode::kInvalidArgument, "no test marginals to aggregate");
  const auto m = static_cast<Eigen::Index>(tr_k.classes());
  Vector numerator = Vector::Zero(m);
  for (const auto& te : test_marginals) {
    if (te.classes() != tr_k.classes()) throw Error(ErrorCode::kDimensionMismatch, "marginal class count mismatch");
    numerator += te.probs();
  }
  Vector w(m);
  for (Eigen::Index y = 0; y < m; ++y) {
    double tr = tr_k[static_cast<std::size_t>(y)];
    if (tr > 0.0) {
      w[y] = numerator[y] / tr;
    } else if (numerator[y] > 0.0 && !zero_unsupported) {
      throw Error(ErrorCode::kUnsupportedClass,
                  "unsupported class " + std::to_string(y) + " in training marginal of node " + std::to_string(k));
    } else {
      w[y] = 0.0;
    }
  }
  return w;
}

/// Shuffled pass over a node's training indices, reshuffled when exhausted.
struct BatchCursor {
  Rng rng;
  std::vector<std::size_t> order;
  std::size_t pos = 0;
};

struct LocalUpdate {
  Vector gradient;  // mean of the local mini-batch gradients
  double mean_loss = 0.0;
};

using PosteriorFn = std::function<ProbabilityMatrix(const Matrix&)>;

/// One data-holding participant. Raw samples never leave a Node: the public
/// surface returns label marginals, gradients, and scalar risks only.
class Node {
 public:
  Node(std::size_t index, LabeledDataset train, LabeledDataset test)
      : index_(index), train_(std::move(train)), test_(std::move(test)) {
    if (train_.classes() != test_.classes() || train_.dim() != test_.dim())
      throw Error(ErrorCode::kDimensionMismatch, "node train/test shapes disagree");
  }

  std::size_t index() const noexcept { return index_; }
  std::size_t classes() const noexcept { return train_.classes(); }
  std::size_t dim() const noexcept { return train_.dim(); }
  std::size_t train_size() const noexcept { return train_.size(); }
  std::size_t test_size() const noexcept { return test_.size(); }

  /// Empirical label marginal of the local training set.
  LabelMarginal train_marginal() const { return train_.empirical_marginal(); }

  /// p̂^te = r̂ ⊙ p^tr from a local VRLS run, renormalized.
  LabelMarginal local_test_marginal(const PredictorConfig& pcfg, const EstimatorOptions& opts) const {
    auto report = estimate_vrls(train_, test_.features(), pcfg, opts);
    return report.ratio.implied_test_marginal();
  }

  /// Same as local_test_marginal but with a supplied posterior in place of a
  /// trained predictor.
  LabelMarginal local_test_marginal(const PosteriorFn& posterior, const EstimatorOptions& opts) const {
    auto report = estimate_mlls(posterior(test_.features()), train_marginal(), opts);
    return report.ratio.implied_test_marginal();
  }

  BatchCursor batch_cursor(std::uint64_t seed) const {
    BatchCursor c{Rng(seed), std::vector<std::size_t>(train_.size()), 0};
    std::iota(c.order.begin(), c.order.end(), std::size_t{0});
    std::shuffle(c.order.begin(), c.order.end(), c.rng);
    return c;
  }

  /// Runs `steps` local mini-batch steps of the class-weighted loss from the
  /// global model and returns the mean gradient. For steps > 1 the local copy
  /// moves by `local_lr` between steps.
  LocalUpdate local_update(const Predictor& global, const Vector& class_weights, std::size_t steps,
                           std::size_t batch_size, double local_lr, double zeta, BatchCursor& cursor) const {
    Predictor local = global;
    Vector sum = Vector::Zero(global.parameters().size());
    double loss_sum = 0.0;
    const std::size_t b = std::min(batch_size, train_.size());
    Matrix xb(static_cast<Eigen::Index>(b), train_.features().cols());
    std::vector<int> yb(b);
    std::vector<double> wb(b);
    for (std::size_t t = 0; t < steps; ++t) {
      if (cursor.pos + b > cursor.order.size()) {
        std::shuffle(cursor.order.begin(), cursor.order.end(), cursor.rng);
        cursor.pos = 0;
      }
      for (std::size_t i = 0; i < b; ++i) {
        std::size_t idx = cursor.order[cursor.pos + i];
        xb.row(static_cast<Eigen::Index>(i)) = train_.features().row(static_cast<Eigen::Index>(idx));
        yb[i] = train_.labels()[idx];
        wb[i] = class_weights[yb[i]];
      }
      cursor.pos += b;
      auto lg = local.loss_and_gradient(xb, yb, zeta, wb);
      loss_sum += lg.loss;
      sum += lg.grad;
      if (steps > 1 && t + 1 < steps) {
        Vector theta = local.parameters() - local_lr * lg.grad;
        if (!theta.allFinite()) break;
        local = local.with_parameters(std::move(theta));
      }
    }
    const double inv = 1.0 / static_cast<double>(steps);
    return {sum * inv, loss_sum * inv};
  }

  double test_accuracy(const Predictor& model) const { return accuracy(model, test_); }

  /// (1/n_k) sum_i w(y_i) CE_i over the whole local training set.
  double weighted_train_risk(const Predictor& model, const Vector& class_weights) const {
    std::vector<double> w(train_.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = class_weights[train_.labels()[i]];
    return model.loss_and_gradient(train_.features(), train_.labels(), 0.0, w).loss;
  }

  /// Mean cross-entropy on the local test set.
  double test_risk(const Predictor& model) const {
    return model.loss_and_gradient(test_.features(), test_.labels(), 0.0).cross_entropy;
  }

 private:
  friend class Federation;

  std::size_t index_;
  LabeledDataset train_;
  LabeledDataset test_;
};

struct RoundTrace {
  std::size_t round = 0;
  double mean_loss = 0.0;
  double avg_accuracy = 0.0;
};

struct FederationResult {
  Vector parameters;
  std::vector<double> node_accuracy;
  double avg_accuracy = 0.0;
  std::vector<Vector> weights;
  std::vector<LabelMarginal> estimated_test_marginals;  // empty unless estimated
  std::vector<RoundTrace> trace;
};

class Federation {
 public:
  Federation(FederationConfig cfg, std::vector<Node> nodes) : cfg_(std::move(cfg)), nodes_(std::move(nodes)) {
    cfg_.validate();
    if (nodes_.size() != cfg_.nodes.size()) throw Error(ErrorCode::kInvalidArgument, "node count differs from config");
  }

  const FederationConfig& config() const noexcept { return cfg_; }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t classes() const { return nodes_.front().classes(); }
  std::size_t dim() const { return nodes_.front().dim(); }

  /// Phase 1 exchange: every node publishes its estimated test marginal.
  std::vector<LabelMarginal> exchange_test_marginals() const {
    std::vector<LabelMarginal> out;
    out.reserve(nodes_.size());
    for (const auto& n : nodes_) out.push_back(n.local_test_marginal(cfg_.local_predictor, cfg_.local_estimator));
    return out;
  }

  /// Weight vectors for the requested weighting, one per node.
  std::vector<Vector> weights_for(Weighting w, std::vector<LabelMarginal>* published = nullptr) const {
    const std::size_t k_nodes = nodes_.size();
    std::vector<Vector> out;
    if (w == Weighting::kNone) {
      out.assign(k_nodes, Vector::Ones(static_cast<Eigen::Index>(classes())));
      return out;
    }
    if (w == Weighting::kTrueRatios) {
      std::vector<LabelMarginal> te;
      for (const auto& spec : cfg_.nodes) te.push_back(spec.test_marginal);
      for (std::size_t k = 0; k < k_nodes; ++k) out.push_back(aggregate_ratios(k, te, cfg_.nodes[k].train_marginal));
    } else {
      auto te = exchange_test_marginals();
      for (std::size_t k = 0; k < k_nodes; ++k)
        out.push_back(aggregate_ratios(k, te, nodes_[k].train_marginal(), true));
      if (published) *published = std::move(te);
    }
    if (cfg_.normalize_weights)
      for (auto& v : out) v /= static_cast<double>(k_nodes);
    return out;
  }

  /// Cross-node variant of the aggregation listing: node k's predictor is
  /// applied to every node j's test features, and
  ///   w_k = (sum_j p_j^tr ⊙ r̂_{k,j}) / p_k^tr.
  /// Ships raw test features across nodes; kept only for comparison with the
  /// marginal-exchange weights.
  std::vector<Vector> listing_variant_weights() const {
    const std::size_t k_nodes = nodes_.size();
    std::vector<Predictor> predictors;
    for (const auto& n : nodes_) predictors.push_back(train_predictor(n.train_, cfg_.local_predictor));
    std::vector<Vector> out;
    for (std::size_t k = 0; k < k_nodes; ++k) {
      const LabelMarginal tr_k = nodes_[k].train_marginal();
      Vector aggregated = Vector::Zero(static_cast<Eigen::Index>(classes()));
      for (std::size_t j = 0; j < k_nodes; ++j) {
        auto ratio = estimate_mlls(predict_proba(predictors[k], nodes_[j].test_.features()), tr_k, cfg_.local_estimator);
        aggregated += nodes_[j].train_marginal().probs().cwiseProduct(ratio.ratio.ratios());
      }
      Vector w = Vector::Zero(aggregated.size());
      for (Eigen::Index y = 0; y < w.size(); ++y)
        if (tr_k.probs()[y] > 0.0) w[y] = aggregated[y] / tr_k.probs()[y];
      out.push_back(std::move(w));
    }
    return out;
  }

  std::vector<double> evaluate(const Predictor& model) const {
    std::vector<double> acc;
    for (const auto& n : nodes_) acc.push_back(n.test_accuracy(model));
    return acc;
  }

  /// sum_k (1/n_k) sum_i w_k(y_i) CE_i.
  double weighted_empirical_risk(const Predictor& model, const std::vector<Vector>& weights) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < nodes_.size(); ++k) acc += nodes_[k].weighted_train_risk(model, weights[k]);
    return acc;
  }

  /// sum_k mean test CE at node k.
  double aggregated_test_risk(const Predictor& model) const {
    double acc = 0.0;
    for (const auto& n : nodes_) acc += n.test_risk(model);
    return acc;
  }

 private:
  FederationConfig cfg_;
  std::vector<Node> nodes_;
};

/// Materializes every node's train/test sets from the shared mixture after
/// checking the scenario's equalities.
inline Federation build_federation(const FederationConfig& cfg, const GaussianMixtureSpec& mix) {
  cfg.validate();
  validate_scenario(cfg.scenario, cfg.nodes);
  std::vector<Node> nodes;
  for (std::size_t k = 0; k < cfg.nodes.size(); ++k) {
    const auto& spec = cfg.nodes[k];
    if (spec.train_marginal.classes() != mix.classes())
      throw Error(ErrorCode::kDimensionMismatch, "node marginal class count differs from mixture");
    nodes.emplace_back(k, gen_gaussian_mixture(mix, spec.train_marginal, spec.n_tr, derive_seed(spec.seed, {1})),
                       gen_gaussian_mixture(mix, spec.test_marginal, spec.n_te, derive_seed(spec.seed, {2})));
  }
  return Federation(cfg, std::move(nodes));
}

inline double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Server loop: each round samples S nodes without replacement, collects
/// their local gradients in node-index order, averages them, and applies
/// the server optimizer.
inline FederationResult train_global(const Federation& fed, const std::vector<Vector>& weights) {
  const auto& cfg = fed.config();
  if (weights.size() != fed.size()) throw Error(ErrorCode::kInvalidArgument, "weights must cover every node");
  for (const auto& w : weights)
    if (static_cast<std::size_t>(w.size()) != fed.classes())
      throw Error(ErrorCode::kDimensionMismatch, "weight vector length differs from class count");

  Predictor model = Predictor::initialize(cfg.global_model.architecture, fed.classes(), fed.dim(), cfg.global_model.seed);
  Vector theta = model.parameters();
  Vector adam_m = Vector::Zero(theta.size());
  Vector adam_v = Vector::Zero(theta.size());

  std::vector<BatchCursor> cursors;
  for (std::size_t k = 0; k < fed.size(); ++k) cursors.push_back(fed.nodes()[k].batch_cursor(derive_seed(cfg.seed, {7, k})));
  Rng sampler(derive_seed(cfg.seed, {11}));
  std::vector<std::size_t> all(fed.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const std::size_t s = cfg.sampled_per_round();

  FederationResult result;
  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    std::vector<std::size_t> chosen = all;
    if (s < fed.size()) {
      std::shuffle(chosen.begin(), chosen.end(), sampler);
      chosen.resize(s);
      std::sort(chosen.begin(), chosen.end());
    }
    Vector grad = Vector::Zero(theta.size());
    double loss = 0.0;
    for (std::size_t k : chosen) {
      auto upd = fed.nodes()[k].local_update(model, weights[k], cfg.local_steps, cfg.global_model.batch_size,
                                             cfg.global_model.learning_rate, cfg.global_model.zeta, cursors[k]);
      grad += upd.gradient;
      loss += upd.mean_loss;
    }
    grad /= static_cast<double>(chosen.size());
    loss /= static_cast<double>(chosen.size());
    if (!std::isfinite(loss) || !grad.allFinite())
      throw Error(ErrorCode::kDiverged, "diverged at round " + std::to_string(round));
    if (cfg.global_model.weight_decay > 0.0) grad += cfg.global_model.weight_decay * theta;

    if (cfg.server.kind == ServerOptimizer::Kind::kAdam) {
      const double t = static_cast<double>(round + 1);
      adam_m = cfg.server.beta1 * adam_m + (1.0 - cfg.server.beta1) * grad;
      adam_v = cfg.server.beta2 * adam_v + (1.0 - cfg.server.beta2) * grad.cwiseProduct(grad);
      const double c1 = 1.0 - std::pow(cfg.server.beta1, t);
      const double c2 = 1.0 - std::pow(cfg.server.beta2, t);
      theta -= (cfg.server.lr * (adam_m / c1).array() / ((adam_v / c2).array().sqrt() + cfg.server.eps)).matrix();
    } else {
      theta -= cfg.server.lr * grad;
    }
    if (!theta.allFinite()) throw Error(ErrorCode::kDiverged, "diverged at round " + std::to_string(round));
    model = model.with_parameters(theta);
    result.trace.push_back({round, loss, mean_of(fed.evaluate(model))});
  }
  result.parameters = theta;
  result.node_accuracy = fed.evaluate(model);
  result.avg_accuracy = mean_of(result.node_accuracy);
  result.weights = weights;
  return result;
}

/// Computes the weights for cfg.weighting and trains the global model.
inline FederationResult run_federation(const Federation& fed, std::optional<Weighting> override_weighting = {}) {
  Weighting w = override_weighting.value_or(fed.config().weighting);
  std::vector<LabelMarginal> published;
  auto weights = fed.weights_for(w, &published);
  auto result = train_global(fed, weights);
  result.estimated_test_marginals = std::move(published);
  return result;
}

inline Predictor model_of(const Federation& fed, const FederationResult& result) {
  return Predictor(fed.config().global_model.architecture, fed.classes(), fed.dim(), result.parameters);
}

}  // namespace labelshift

#endif  // LABELSHIFT_FEDERATED_HPP
