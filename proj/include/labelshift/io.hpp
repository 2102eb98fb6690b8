// JSON encodings for predictors, estimate reports, and federation configs
// and results.
//
// Predictor record layout:
//   {"format": "labelshift.predictor", "version": 1,
//    "architecture": {"kind": "linear"|"mlp", "hidden_units": h},
//    "classes": m, "dim": d, "parameters": [theta_0, ...]}
// Parameters are written with shortest round-trip formatting, so a
// save/load cycle reproduces every double bit for bit. The flat parameter
// order is layer by layer: weights (row-major, out x in) then biases.

#ifndef LABELSHIFT_IO_HPP
#define LABELSHIFT_IO_HPP

#include "labelshift/estimators.hpp"
#include "labelshift/federated.hpp"
#include "labelshift/predictor.hpp"
#include "labelshift/types.hpp"

#include <json.hpp>

#include <fstream>
#include <string>
#include <vector>

namespace labelshift {

using json = nlohmann::json;

inline json to_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline Vector vector_from_json(const json& j) {
  auto vals = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

inline LabelMarginal marginal_from_json(const json& j) { return LabelMarginal::normalized(vector_from_json(j)); }

inline json to_json(const Architecture& a) {
  if (a.kind == Architecture::Kind::kLinear) return {{"kind", "linear"}};
  return {{"kind", "mlp"}, {"hidden_units", a.hidden}};
}

inline Architecture architecture_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "linear") return Architecture::linear();
  if (kind == "mlp") return Architecture::mlp(j.value("hidden_units", std::size_t{32}));
  throw Error(ErrorCode::kInvalidArgument, "unknown architecture kind: " + kind);
}

inline json to_json(const Predictor& p) {
  return {{"format", "labelshift.predictor"}, {"version", 1},       {"architecture", to_json(p.architecture())},
          {"classes", p.classes()},          {"dim", p.dim()},     {"parameters", to_json(p.parameters())}};
}

inline Predictor predictor_from_json(const json& j) {
  if (j.value("format", std::string{}) != "labelshift.predictor")
    throw Error(ErrorCode::kInvalidArgument, "not a labelshift predictor record");
  return Predictor(architecture_from_json(j.at("architecture")), j.at("classes").get<std::size_t>(),
                   j.at("dim").get<std::size_t>(), vector_from_json(j.at("parameters")));
}

inline void save_predictor(const Predictor& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out << to_json(p).dump(2) << '\n';
}

inline Predictor load_predictor(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return predictor_from_json(json::parse(in));
}

inline json to_json(const PredictorConfig& c) {
  return {{"architecture", to_json(c.architecture)}, {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},              {"max_epochs", c.max_epochs},
          {"loss_threshold", c.loss_threshold},      {"zeta", c.zeta},
          {"weight_decay", c.weight_decay},          {"seed", c.seed},
          {"penalty_input", c.penalty_input == PenaltyInput::kSoftmaxOfProbs ? "softmax_of_probs" : "softmax_of_logits"}};
}

/// Missing keys keep the values already in `base`.
inline PredictorConfig predictor_config_from_json(const json& j, PredictorConfig base = {}) {
  if (j.contains("architecture")) base.architecture = architecture_from_json(j.at("architecture"));
  base.learning_rate = j.value("learning_rate", base.learning_rate);
  base.batch_size = j.value("batch_size", base.batch_size);
  base.max_epochs = j.value("max_epochs", base.max_epochs);
  base.loss_threshold = j.value("loss_threshold", base.loss_threshold);
  base.zeta = j.value("zeta", base.zeta);
  base.weight_decay = j.value("weight_decay", base.weight_decay);
  base.seed = j.value("seed", base.seed);
  if (j.contains("penalty_input")) {
    const auto pi = j.at("penalty_input").get<std::string>();
    if (pi == "softmax_of_probs") base.penalty_input = PenaltyInput::kSoftmaxOfProbs;
    else if (pi == "softmax_of_logits") base.penalty_input = PenaltyInput::kSoftmaxOfLogits;
    else throw Error(ErrorCode::kInvalidArgument, "unknown penalty_input: " + pi);
  }
  base.validate();
  return base;
}

inline json to_json(const EstimatorOptions& o) {
  return {{"method", to_string(o.method)}, {"max_iters", o.max_iters},     {"tol", o.tol},
          {"step_size", o.step_size},      {"rlls_lambda", o.rlls_lambda}};
}

inline EstimatorOptions estimator_options_from_json(const json& j, EstimatorOptions base = {}) {
  if (j.contains("method")) base.method = method_from_string(j.at("method").get<std::string>());
  base.max_iters = j.value("max_iters", base.max_iters);
  base.tol = j.value("tol", base.tol);
  base.step_size = j.value("step_size", base.step_size);
  base.rlls_lambda = j.value("rlls_lambda", base.rlls_lambda);
  base.validate();
  return base;
}

inline json to_json(const EstimateReport& r) {
  return {{"ratio", to_json(r.ratio.ratios())},
          {"train_marginal", to_json(r.ratio.train_marginal().probs())},
          {"objective", r.final_objective},
          {"iterations", r.iterations_used},
          {"converged", r.converged}};
}

inline json to_json(const ServerOptimizer& s) {
  if (s.kind == ServerOptimizer::Kind::kSgd) return {{"kind", "sgd"}, {"lr", s.lr}};
  return {{"kind", "adam"}, {"lr", s.lr}, {"betas", {s.beta1, s.beta2}}, {"eps", s.eps}};
}

inline ServerOptimizer server_optimizer_from_json(const json& j) {
  ServerOptimizer s;
  const auto kind = j.value("kind", std::string{"adam"});
  if (kind == "sgd") {
    s.kind = ServerOptimizer::Kind::kSgd;
  } else if (kind != "adam") {
    throw Error(ErrorCode::kInvalidArgument, "unknown server optimizer: " + kind);
  }
  s.lr = j.value("lr", s.lr);
  if (j.contains("betas")) {
    s.beta1 = j.at("betas").at(0).get<double>();
    s.beta2 = j.at("betas").at(1).get<double>();
  }
  s.eps = j.value("eps", s.eps);
  return s;
}

/// FederationConfig document:
///   {"nodes": [{"train_marginal": [...], "test_marginal": [...],
///               "n_tr": N, "n_te": N, "seed": S}, ...],
///    "scenario": "no_ls"|"ls_single"|"ls_both"|"ls_multi",
///    "rounds": R, "local_steps": tau, "nodes_per_round": S (0 = all),
///    "server_optimizer": {"kind": "adam", "lr": 1e-3, "betas": [0.9, 0.999], "eps": 1e-8},
///    "weighting": "none"|"true_ratios"|"estimated_ratios",
///    "global_model": {PredictorConfig}, "local_predictor": {PredictorConfig},
///    "local_estimator": {EstimatorOptions}, "normalize_weights": false, "seed": S}
/// Marginals are normalized on load, so raw counts are accepted.
inline FederationConfig federation_config_from_json(const json& j) {
  FederationConfig cfg;
  for (const auto& n : j.at("nodes")) {
    cfg.nodes.push_back({marginal_from_json(n.at("train_marginal")), marginal_from_json(n.at("test_marginal")),
                         n.value("n_tr", std::size_t{1000}), n.value("n_te", std::size_t{1000}),
                         n.value("seed", std::uint64_t{cfg.nodes.size()})});
  }
  cfg.scenario = scenario_from_string(j.value("scenario", std::string{"ls_multi"}));
  cfg.rounds = j.value("rounds", cfg.rounds);
  cfg.local_steps = j.value("local_steps", cfg.local_steps);
  cfg.nodes_per_round = j.value("nodes_per_round", cfg.nodes_per_round);
  if (j.contains("server_optimizer")) cfg.server = server_optimizer_from_json(j.at("server_optimizer"));
  cfg.weighting = weighting_from_string(j.value("weighting", std::string{"estimated_ratios"}));
  if (j.contains("global_model")) cfg.global_model = predictor_config_from_json(j.at("global_model"), cfg.global_model);
  if (j.contains("local_predictor"))
    cfg.local_predictor = predictor_config_from_json(j.at("local_predictor"), cfg.local_predictor);
  if (j.contains("local_estimator"))
    cfg.local_estimator = estimator_options_from_json(j.at("local_estimator"), cfg.local_estimator);
  cfg.normalize_weights = j.value("normalize_weights", cfg.normalize_weights);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.validate();
  return cfg;
}

inline json to_json(const FederationConfig& cfg) {
  json nodes = json::array();
  for (const auto& n : cfg.nodes)
    nodes.push_back({{"train_marginal", to_json(n.train_marginal.probs())},
                     {"test_marginal", to_json(n.test_marginal.probs())},
                     {"n_tr", n.n_tr},
                     {"n_te", n.n_te},
                     {"seed", n.seed}});
  return {{"nodes", nodes},
          {"scenario", to_string(cfg.scenario)},
          {"rounds", cfg.rounds},
          {"local_steps", cfg.local_steps},
          {"nodes_per_round", cfg.nodes_per_round},
          {"server_optimizer", to_json(cfg.server)},
          {"weighting", to_string(cfg.weighting)},
          {"global_model", to_json(cfg.global_model)},
          {"local_predictor", to_json(cfg.local_predictor)},
          {"local_estimator", to_json(cfg.local_estimator)},
          {"normalize_weights", cfg.normalize_weights},
          {"seed", cfg.seed}};
}

inline json to_json(const FederationResult& r) {
  json weights = json::array();
  for (const auto& w : r.weights) weights.push_back(to_json(w));
  json marginals = json::array();
  for (const auto& m : r.estimated_test_marginals) marginals.push_back(to_json(m.probs()));
  json trace = json::array();
  for (const auto& t : r.trace)
    trace.push_back({{"round", t.round}, {"mean_loss", t.mean_loss}, {"avg_accuracy", t.avg_accuracy}});
  return {{"parameters", to_json(r.parameters)},
          {"node_accuracy", r.node_accuracy},
          {"avg_accuracy", r.avg_accuracy},
          {"weights", weights},
          {"estimated_test_marginals", marginals},
          {"trace", trace}};
}

}  // namespace labelshift

#endif  // LABELSHIFT_IO_HPP
