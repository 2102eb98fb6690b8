// Reproducible experiment drivers behind the `labelshift` CLI.
//
// Every trial derives its RNG streams from (master seed, cell index, trial
// index), so outputs are identical for any worker count. Estimator failures
// inside a trial are recorded as rows carrying an error tag.
//
// Sweep CSV schema (schema_version 1), after `#`-prefixed header lines
// that embed the resolved config:
//   preset,alpha,n_te,estimator,trial,mse,error
// Federation CSV schemas:
//   federate_nodes.csv:  weighting,node,accuracy
//   federate_trace.csv:  weighting,round,mean_loss,avg_accuracy

#ifndef LABELSHIFT_EXPERIMENTS_HPP
#define LABELSHIFT_EXPERIMENTS_HPP

#include "labelshift/data.hpp"
#include "labelshift/estimators.hpp"
#include "labelshift/federated.hpp"
#include "labelshift/io.hpp"
#include "labelshift/metrics.hpp"
#include "labelshift/predictor.hpp"
#include "labelshift/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace labelshift {

inline constexpr int kSchemaVersion = 1;

enum class ExperimentKind { kSweepAlpha, kSweepSize, kRateCheck, kEstimateOnce, kFederate, kRelaxedSweep };

inline std::string_view to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kSweepAlpha: return "sweep_alpha";
    case ExperimentKind::kSweepSize: return "sweep_size";
    case ExperimentKind::kRateCheck: return "rate_check";
    case ExperimentKind::kEstimateOnce: return "estimate_once";
    case ExperimentKind::kFederate: return "federate";
    case ExperimentKind::kRelaxedSweep: return "relaxed_sweep";
  }
  return "unknown";
}

inline ExperimentKind experiment_kind_from_string(std::string_view s) {
  for (auto k : {ExperimentKind::kSweepAlpha, ExperimentKind::kSweepSize, ExperimentKind::kRateCheck,
                 ExperimentKind::kEstimateOnce, ExperimentKind::kFederate, ExperimentKind::kRelaxedSweep})
    if (to_string(k) == s) return k;
  throw Error(ErrorCode::kInvalidArgument, "unknown experiment kind: " + std::string(s));
}

/// Where training and test samples come from.
struct DataSource {
  enum class Kind { kSynthetic, kIdx };
  Kind kind = Kind::kSynthetic;
  // synthetic: simplex mixture
  std::size_t classes = 3;
  std::size_t dim = 0;  // 0 means dim = classes
  double separation = 3.0;
  double sigma = 1.0;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
};

struct NamedRelaxedSpec {
  std::string name;
  RelaxedShiftSpec spec;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kSweepAlpha;
  // Any of: bbse, rlls, mlls_em, mlls_gd, vrls, vrls_gd, oracle (synthetic only).
  std::vector<std::string> estimators{"bbse", "mlls_em", "vrls"};
  std::size_t trials = 10;
  std::uint64_t seed = 0;
  DataSource source;
  std::string out_dir = "out";
  std::size_t threads = 1;

  std::vector<double> alpha_grid{0.1, 1.0, 10.0};
  std::vector<std::size_t> n_te_grid;  // empty: 200, 400, ..., 10000
  std::size_t n_te = 5000;
  std::size_t n_tr = 2000;
  // Fraction of the training set held out for the BBSE/RLLS confusion
  // matrix; 0 reuses the full training set.
  double holdout_fraction = 0.0;

  // Base predictor; MLLS/BBSE/RLLS use it with zeta = 0, VRLS with vrls_zeta.
  PredictorConfig predictor{Architecture::linear(), 0.1, 64, 50, 0.05, 0.0, 0.0, 0};
  double vrls_zeta = 1.0;
  EstimatorOptions estimator;
  double rlls_lambda = 0.0;

  std::vector<NamedRelaxedSpec> relaxed_presets{{"relaxed", RelaxedShiftSpec::relaxed()},
                                                {"relax-m", RelaxedShiftSpec::relaxed_strong()}};

  // estimate_once: explicit test marginal (otherwise a Dirichlet draw at alpha_grid[0]).
  std::optional<Vector> test_marginal;

  // federate
  std::optional<FederationConfig> federation;
  bool listing_variant = false;

  std::vector<std::size_t> resolved_n_te_grid() const {
    if (!n_te_grid.empty()) return n_te_grid;
    if (kind == ExperimentKind::kRateCheck) return {250, 500, 1000, 2000, 4000, 8000};
    std::vector<std::size_t> g;
    for (std::size_t n = 200; n <= 10000; n += 200) g.push_back(n);
    return g;
  }

  void validate() const {
    if (trials < 1) throw Error(ErrorCode::kInvalidArgument, "trials must be >= 1");
    if (alpha_grid.empty()) throw Error(ErrorCode::kInvalidArgument, "alpha grid must be nonempty");
    for (double a : alpha_grid)
      if (!(a > 0.0)) throw Error(ErrorCode::kInvalidArgument, "alpha values must be positive");
    if (estimators.empty() && kind != ExperimentKind::kFederate)
      throw Error(ErrorCode::kInvalidArgument, "estimator list must be nonempty");
    for (const auto& e : estimators)
      if (e != "bbse" && e != "rlls" && e != "mlls_em" && e != "mlls_gd" && e != "vrls" && e != "vrls_gd" && e != "oracle")
        throw Error(ErrorCode::kInvalidArgument, "unknown estimator: " + e);
    if (n_tr < 1 || n_te < 1) throw Error(ErrorCode::kInvalidArgument, "sample counts must be >= 1");
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0))
      throw Error(ErrorCode::kInvalidArgument, "holdout_fraction must lie in [0, 1)");
    if (kind == ExperimentKind::kFederate && !federation)
      throw Error(ErrorCode::kInvalidArgument, "federate needs a federation block");
    if (kind == ExperimentKind::kRelaxedSweep && relaxed_presets.empty())
      throw Error(ErrorCode::kInvalidArgument, "relaxed_sweep needs at least one preset");
    for (const auto& p : relaxed_presets) p.spec.validate();
    predictor.validate();
    estimator.validate();
  }
};

inline json to_json(const DataSource& s) {
  if (s.kind == DataSource::Kind::kIdx)
    return {{"kind", "idx"},
            {"classes", s.classes},
            {"train_images", s.train_images},
            {"train_labels", s.train_labels},
            {"test_images", s.test_images},
            {"test_labels", s.test_labels}};
  return {{"kind", "synthetic"},
          {"classes", s.classes},
          {"dim", s.dim == 0 ? s.classes : s.dim},
          {"separation", s.separation},
          {"sigma", s.sigma}};
}

inline DataSource data_source_from_json(const json& j) {
  DataSource s;
  const auto kind = j.value("kind", std::string{"synthetic"});
  s.classes = j.value("classes", kind == "idx" ? std::size_t{10} : s.classes);
  if (kind == "idx") {
    s.kind = DataSource::Kind::kIdx;
    s.train_images = j.at("train_images").get<std::string>();
    s.train_labels = j.at("train_labels").get<std::string>();
    s.test_images = j.at("test_images").get<std::string>();
    s.test_labels = j.at("test_labels").get<std::string>();
  } else if (kind == "synthetic") {
    s.dim = j.value("dim", s.dim);
    s.separation = j.value("separation", s.separation);
    s.sigma = j.value("sigma", s.sigma);
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown data source kind: " + kind);
  }
  return s;
}

inline json to_json(const ExperimentConfig& c) {
  json presets = json::array();
  for (const auto& p : c.relaxed_presets)
    presets.push_back({{"name", p.name},
                       {"apply_prob", p.spec.apply_prob},
                       {"noise_sigma_range", {p.spec.noise_sigma_lo, p.spec.noise_sigma_hi}},
                       {"brightness_delta", p.spec.brightness_delta}});
  json j = {{"kind", to_string(c.kind)},
            {"estimators", c.estimators},
            {"trials", c.trials},
            {"seed", c.seed},
            {"source", to_json(c.source)},
            {"alpha_grid", c.alpha_grid},
            {"n_te_grid", c.resolved_n_te_grid()},
            {"n_te", c.n_te},
            {"n_tr", c.n_tr},
            {"holdout_fraction", c.holdout_fraction},
            {"predictor", to_json(c.predictor)},
            {"vrls_zeta", c.vrls_zeta},
            {"estimator", to_json(c.estimator)},
            {"rlls_lambda", c.rlls_lambda},
            {"relaxed_presets", presets},
            {"listing_variant", c.listing_variant}};
  if (c.test_marginal) j["test_marginal"] = to_json(*c.test_marginal);
  if (c.federation) j["federation"] = to_json(*c.federation);
  return j;
}

/// `kind` (from the CLI subcommand) wins over the document's "kind"; a
/// document naming a different kind is rejected.
inline ExperimentConfig experiment_config_from_json(const json& j, std::optional<ExperimentKind> kind = {}) {
  ExperimentConfig c;
  if (j.contains("kind")) {
    c.kind = experiment_kind_from_string(j.at("kind").get<std::string>());
    if (kind && *kind != c.kind)
      throw Error(ErrorCode::kInvalidArgument, "config kind " + std::string(to_string(c.kind)) +
                                                   " does not match subcommand " + std::string(to_string(*kind)));
  } else if (kind) {
    c.kind = *kind;
  } else {
    throw Error(ErrorCode::kInvalidArgument, "config needs a kind");
  }
  if (c.kind == ExperimentKind::kEstimateOnce || c.kind == ExperimentKind::kSweepSize ||
      c.kind == ExperimentKind::kRateCheck)
    c.alpha_grid = {1.0};
  if (j.contains("estimators")) c.estimators = j.at("estimators").get<std::vector<std::string>>();
  c.trials = j.value("trials", c.trials);
  c.seed = j.value("seed", c.seed);
  if (j.contains("source")) c.source = data_source_from_json(j.at("source"));
  if (c.source.kind == DataSource::Kind::kIdx) {
    c.predictor.architecture = Architecture::mlp(128);
  } else if (c.source.dim == 0) {
    c.source.dim = c.source.classes;
  }
  c.out_dir = j.value("out_dir", c.out_dir);
  c.threads = j.value("threads", c.threads);
  if (j.contains("alpha_grid")) c.alpha_grid = j.at("alpha_grid").get<std::vector<double>>();
  if (j.contains("n_te_grid")) c.n_te_grid = j.at("n_te_grid").get<std::vector<std::size_t>>();
  c.n_te = j.value("n_te", c.n_te);
  c.n_tr = j.value("n_tr", c.n_tr);
  c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
  if (j.contains("predictor")) c.predictor = predictor_config_from_json(j.at("predictor"), c.predictor);
  c.vrls_zeta = j.value("vrls_zeta", c.vrls_zeta);
  if (j.contains("estimator")) c.estimator = estimator_options_from_json(j.at("estimator"), c.estimator);
  c.rlls_lambda = j.value("rlls_lambda", c.rlls_lambda);
  if (j.contains("relaxed_presets")) {
    c.relaxed_presets.clear();
    for (const auto& p : j.at("relaxed_presets")) {
      RelaxedShiftSpec s;
      s.apply_prob = p.value("apply_prob", s.apply_prob);
      if (p.contains("noise_sigma_range")) {
        s.noise_sigma_lo = p.at("noise_sigma_range").at(0).get<double>();
        s.noise_sigma_hi = p.at("noise_sigma_range").at(1).get<double>();
      }
      s.brightness_delta = p.value("brightness_delta", s.brightness_delta);
      c.relaxed_presets.push_back({p.value("name", std::string{"preset"}), s});
    }
  }
  if (j.contains("test_marginal")) c.test_marginal = vector_from_json(j.at("test_marginal"));
  if (j.contains("federation")) c.federation = federation_config_from_json(j.at("federation"));
  c.listing_variant = j.value("listing_variant", c.listing_variant);
  c.validate();
  return c;
}

struct SweepRow {
  std::string preset = "none";
  double alpha = 0.0;
  std::size_t n_te = 0;
  std::string estimator;
  std::size_t trial = 0;
  double mse = 0.0;
  std::string error;  // empty when the estimator succeeded
};

struct CellSummary {
  std::string preset;
  double alpha = 0.0;
  std::size_t n_te = 0;
  std::string estimator;
  TrialSummary summary;
  double median = 0.0;
  std::size_t errors = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<CellSummary> cells;
  std::map<std::string, double> slopes;  // estimator -> log-log slope (size sweeps, first alpha)
};

namespace detail {

/// Loaded once per run and shared read-only by every trial.
struct TrialData {
  std::optional<GaussianMixtureSpec> mix;
  std::optional<LabeledDataset> train_pool;
  std::optional<LabeledDataset> test_pool;
  std::size_t classes = 0;
};

inline TrialData load_trial_data(const DataSource& s) {
  TrialData d;
  if (s.kind == DataSource::Kind::kSynthetic) {
    d.mix = GaussianMixtureSpec::simplex(s.classes, s.separation, s.sigma, s.dim);
    d.classes = s.classes;
  } else {
    d.train_pool = load_idx(s.train_images, s.train_labels, s.classes);
    d.test_pool = load_idx(s.test_images, s.test_labels, s.classes);
    d.classes = s.classes;
  }
  return d;
}

inline LabeledDataset draw(const TrialData& data, const std::optional<LabeledDataset>& pool,
                           const LabelMarginal& marginal, std::size_t n, std::uint64_t seed) {
  if (data.mix) return gen_gaussian_mixture(*data.mix, marginal, n, seed);
  return resample_by_marginal(*pool, marginal, n, seed);
}

struct TrialSetup {
  LabeledDataset train;
  LabeledDataset test;
  LabelMarginal train_marginal;
  LabelMarginal test_marginal;
};

inline TrialSetup setup_trial(const ExperimentConfig& cfg, const TrialData& data, double alpha, std::size_t n_te,
                              std::uint64_t stream, const std::optional<Vector>& fixed_test = {}) {
  LabelMarginal tr = LabelMarginal::uniform(data.classes);
  LabelMarginal te = fixed_test ? LabelMarginal::normalized(*fixed_test)
                                : sample_dirichlet_marginal(alpha, data.classes, derive_seed(stream, {2}));
  auto train = draw(data, data.train_pool, tr, cfg.n_tr, derive_seed(stream, {1}));
  auto test = draw(data, data.test_pool ? data.test_pool : data.train_pool, te, n_te, derive_seed(stream, {3}));
  return {std::move(train), std::move(test), std::move(tr), std::move(te)};
}

/// Runs every configured estimator on one trial; the map holds the report
/// or the error message.
struct EstimatorOutcome {
  std::optional<EstimateReport> report;
  std::string error;
};

inline std::vector<std::pair<std::string, EstimatorOutcome>> run_estimators(const ExperimentConfig& cfg,
                                                                           const TrialData& data,
                                                                           const LabeledDataset& train,
                                                                           const Matrix& test_features,
                                                                           std::uint64_t stream) {
  auto wants = [&](std::string_view name) {
    return std::find(cfg.estimators.begin(), cfg.estimators.end(), name) != cfg.estimators.end();
  };
  PredictorConfig base = cfg.predictor;
  base.seed = derive_seed(stream, {5});

  // Split off the confusion-matrix holdout if requested.
  std::optional<LabeledDataset> fit_set;
  std::optional<LabeledDataset> holdout;
  if (cfg.holdout_fraction > 0.0) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(stream, {6}));
    std::shuffle(order.begin(), order.end(), rng);
    auto n_hold = static_cast<std::size_t>(cfg.holdout_fraction * static_cast<double>(train.size()));
    n_hold = std::clamp<std::size_t>(n_hold, 1, train.size() - 1);
    std::vector<std::size_t> hold(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_hold));
    std::vector<std::size_t> fit(order.begin() + static_cast<std::ptrdiff_t>(n_hold), order.end());
    holdout = train.subset(hold);
    fit_set = train.subset(fit);
  }
  const LabeledDataset& fit = fit_set ? *fit_set : train;
  const LabeledDataset& val = holdout ? *holdout : train;
  const LabelMarginal tr = fit.empirical_marginal();

  std::optional<ProbabilityMatrix> plain_te, plain_val, vrls_te;
  std::string plain_error, vrls_error;
  if (wants("bbse") || wants("rlls") || wants("mlls_em") || wants("mlls_gd")) {
    try {
      PredictorConfig p = base;
      p.zeta = 0.0;
      Predictor pred = train_predictor(fit, p);
      plain_te = predict_proba(pred, test_features);
      if (wants("bbse") || wants("rlls")) plain_val = predict_proba(pred, val.features());
    } catch (const Error& e) {
      plain_error = e.what();
    }
  }
  if (wants("vrls") || wants("vrls_gd")) {
    try {
      PredictorConfig p = base;
      p.zeta = cfg.vrls_zeta;
      vrls_te = predict_proba(train_predictor(fit, p), test_features);
    } catch (const Error& e) {
      vrls_error = e.what();
    }
  }

  std::vector<std::pair<std::string, EstimatorOutcome>> out;
  for (const auto& name : cfg.estimators) {
    EstimatorOutcome o;
    try {
      EstimatorOptions em = cfg.estimator;
      em.method = Method::kMllsEm;
      EstimatorOptions gd = cfg.estimator;
      gd.method = Method::kMllsGd;
      auto need = [](const std::optional<ProbabilityMatrix>& p, const std::string& err) -> const ProbabilityMatrix& {
        if (!p) throw Error(ErrorCode::kDiverged, err);
        return *p;
      };
      if (name == "bbse") {
        o.report = estimate_bbse(need(plain_val, plain_error), val.labels(), need(plain_te, plain_error), tr);
      } else if (name == "rlls") {
        o.report = estimate_rlls(need(plain_val, plain_error), val.labels(), need(plain_te, plain_error), tr,
                                 cfg.rlls_lambda);
      } else if (name == "mlls_em") {
        o.report = estimate_mlls(need(plain_te, plain_error), tr, em);
      } else if (name == "mlls_gd") {
        o.report = estimate_mlls(need(plain_te, plain_error), tr, gd);
      } else if (name == "vrls") {
        o.report = estimate_mlls(need(vrls_te, vrls_error), tr, em);
      } else if (name == "vrls_gd") {
        o.report = estimate_mlls(need(vrls_te, vrls_error), tr, gd);
      } else if (name == "oracle") {
        if (!data.mix) throw Error(ErrorCode::kInvalidArgument, "oracle estimator needs a synthetic source");
        o.report = estimate_mlls(true_posterior_matrix(*data.mix, LabelMarginal::uniform(data.classes), test_features),
                                 tr, em);
      }
    } catch (const Error& e) {
      o.report.reset();
      o.error = e.what();
    }
    out.emplace_back(name, std::move(o));
  }
  return out;
}

/// Runs `count` independent jobs on up to `threads` workers; job i writes
/// only slot i, so the result order never depends on scheduling.
template <typename T>
std::vector<T> parallel_map(std::size_t count, std::size_t threads, const std::function<T(std::size_t)>& job) {
  std::vector<T> out(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) out[i] = job(i);
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(threads, count));
  if (n_workers == 1) {
    worker();
    return out;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  pool.clear();
  return out;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Core sweep: one cell per (preset, alpha, n_te). Seeds depend on the
/// alpha/n_te cell and trial only, so presets see identical base draws.
inline SweepResult run_sweep(const ExperimentConfig& cfg, const std::vector<NamedRelaxedSpec>& presets,
                             const std::vector<std::size_t>& n_te_values) {
  cfg.validate();
  const auto data = detail::load_trial_data(cfg.source);

  struct Job {
    std::size_t preset, alpha_idx, n_idx, trial;
  };
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < presets.size(); ++p)
    for (std::size_t a = 0; a < cfg.alpha_grid.size(); ++a)
      for (std::size_t n = 0; n < n_te_values.size(); ++n)
        for (std::size_t t = 0; t < cfg.trials; ++t) jobs.push_back({p, a, n, t});

  auto rows_per_job = detail::parallel_map<std::vector<SweepRow>>(
      jobs.size(), cfg.threads, [&](std::size_t i) {
        const Job& job = jobs[i];
        const double alpha = cfg.alpha_grid[job.alpha_idx];
        const std::size_t n_te = n_te_values[job.n_idx];
        const std::uint64_t cell = job.alpha_idx * n_te_values.size() + job.n_idx;
        const std::uint64_t stream = derive_seed(cfg.seed, {cell, job.trial});
        std::vector<SweepRow> rows;
        const std::string& preset = presets[job.preset].name;
        try {
          auto setup = detail::setup_trial(cfg, data, alpha, n_te, stream);
          RelaxedShiftSpec rs = presets[job.preset].spec;
          rs.seed = derive_seed(stream, {4});
          LabeledDataset test = perturb_relaxed(setup.test, rs);
          const Vector truth = ratio_from_marginals(setup.test_marginal, setup.train_marginal).ratios();
          for (auto& [name, outcome] : detail::run_estimators(cfg, data, setup.train, test.features(), stream)) {
            SweepRow r{preset, alpha, n_te, name, job.trial, 0.0, outcome.error};
            if (outcome.report) r.mse = ratio_mse(outcome.report->ratio.ratios(), truth);
            rows.push_back(std::move(r));
          }
        } catch (const Error& e) {
          for (const auto& name : cfg.estimators) rows.push_back({preset, alpha, n_te, name, job.trial, 0.0, e.what()});
        }
        return rows;
      });

  SweepResult result;
  for (auto& rows : rows_per_job)
    for (auto& r : rows) result.rows.push_back(std::move(r));

  for (const auto& preset : presets)
    for (double alpha : cfg.alpha_grid)
      for (std::size_t n_te : n_te_values)
        for (const auto& est : cfg.estimators) {
          std::vector<double> vals;
          std::size_t errors = 0;
          for (const auto& r : result.rows) {
            if (r.preset != preset.name || r.alpha != alpha || r.n_te != n_te || r.estimator != est) continue;
            if (r.error.empty()) vals.push_back(r.mse);
            else ++errors;
          }
          CellSummary cs{preset.name, alpha, n_te, est, {}, 0.0, errors};
          if (!vals.empty()) {
            cs.summary = summarize(vals);
            cs.median = median(vals);
          }
          result.cells.push_back(std::move(cs));
        }

  if (n_te_values.size() >= 3) {
    for (const auto& est : cfg.estimators) {
      std::vector<std::pair<double, double>> pts;
      for (const auto& c : result.cells)
        if (c.preset == presets.front().name && c.alpha == cfg.alpha_grid.front() && c.estimator == est &&
            c.summary.count > 0)
          pts.emplace_back(static_cast<double>(c.n_te), c.summary.mean);
      try {
        if (pts.size() >= 3) result.slopes[est] = loglog_slope(pts);
      } catch (const Error&) {
      }
    }
  }
  return result;
}

inline SweepResult run_sweep_alpha(const ExperimentConfig& cfg) {
  return run_sweep(cfg, {{"none", RelaxedShiftSpec{0.0, 0.1, 0.1, 0.0, 0}}}, {cfg.n_te});
}

inline SweepResult run_sweep_size(const ExperimentConfig& cfg) {
  return run_sweep(cfg, {{"none", RelaxedShiftSpec{0.0, 0.1, 0.1, 0.0, 0}}}, cfg.resolved_n_te_grid());
}

inline SweepResult run_relaxed_sweep(const ExperimentConfig& cfg) {
  return run_sweep(cfg, cfg.relaxed_presets, {cfg.n_te});
}

inline const CellSummary* find_cell(const SweepResult& r, std::string_view estimator, double alpha,
                                    std::optional<std::size_t> n_te = {}, std::string_view preset = "none") {
  for (const auto& c : r.cells)
    if (c.estimator == estimator && c.alpha == alpha && c.preset == preset && (!n_te || c.n_te == *n_te)) return &c;
  return nullptr;
}

// Output writers.

inline std::filesystem::path ensure_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create output directory " + dir + ": " + ec.message());
  return p;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

inline std::string csv_header(const ExperimentConfig& cfg, std::string_view columns) {
  std::ostringstream os;
  os << "# labelshift schema_version=" << kSchemaVersion << " kind=" << to_string(cfg.kind) << " seed=" << cfg.seed
     << "\n# config=" << to_json(cfg).dump() << "\n"
     << columns << "\n";
  return os.str();
}

inline std::string sweep_csv(const ExperimentConfig& cfg, const SweepResult& r) {
  std::ostringstream os;
  os << csv_header(cfg, "preset,alpha,n_te,estimator,trial,mse,error");
  for (const auto& row : r.rows) {
    os << row.preset << ',' << detail::format_double(row.alpha) << ',' << row.n_te << ',' << row.estimator << ','
       << row.trial << ',';
    if (row.error.empty()) {
      os << detail::format_double(row.mse) << ",";
    } else {
      std::string e = row.error;
      std::replace(e.begin(), e.end(), '"', '\'');
      os << ",\"" << e << '"';
    }
    os << '\n';
  }
  return os.str();
}

inline json sweep_summary_json(const ExperimentConfig& cfg, const SweepResult& r) {
  json cells = json::array();
  for (const auto& c : r.cells) {
    json jc = {{"preset", c.preset}, {"alpha", c.alpha}, {"n_te", c.n_te},     {"estimator", c.estimator},
               {"count", c.summary.count}, {"errors", c.errors}};
    if (c.summary.count > 0) {
      jc["mean"] = c.summary.mean;
      jc["std"] = c.summary.std;
      jc["median"] = c.median;
    }
    cells.push_back(std::move(jc));
  }
  json j = {{"schema_version", kSchemaVersion},
            {"kind", to_string(cfg.kind)},
            {"seed", cfg.seed},
            {"config", to_json(cfg)},
            {"mse_normalization", "mean over classes"},
            {"cells", cells}};
  if (!r.slopes.empty()) j["loglog_slopes"] = r.slopes;
  return j;
}

struct FederateRun {
  Weighting weighting;
  FederationResult result;
};

struct FederateOutput {
  std::vector<FederateRun> runs;
  std::vector<Vector> listing_weights;  // only with listing_variant
};

inline FederateOutput run_federate(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto& fcfg = *cfg.federation;
  auto mix = GaussianMixtureSpec::simplex(cfg.source.classes, cfg.source.separation, cfg.source.sigma,
                                          cfg.source.dim == 0 ? cfg.source.classes : cfg.source.dim);
  Federation fed = build_federation(fcfg, mix);
  FederateOutput out;
  for (Weighting w : {Weighting::kNone, Weighting::kEstimatedRatios, Weighting::kTrueRatios})
    out.runs.push_back({w, run_federation(fed, w)});
  if (cfg.listing_variant) out.listing_weights = fed.listing_variant_weights();
  return out;
}

/// Writes the files for one experiment kind and returns the number of
/// recorded per-cell errors.
inline std::size_t write_outputs(const ExperimentConfig& cfg, const std::string& out_dir) {
  auto dir = ensure_dir(out_dir);
  const std::string kind(to_string(cfg.kind));
  switch (cfg.kind) {
    case ExperimentKind::kSweepAlpha:
    case ExperimentKind::kSweepSize:
    case ExperimentKind::kRateCheck:
    case ExperimentKind::kRelaxedSweep: {
      SweepResult r = cfg.kind == ExperimentKind::kSweepAlpha     ? run_sweep_alpha(cfg)
                      : cfg.kind == ExperimentKind::kRelaxedSweep ? run_relaxed_sweep(cfg)
                                                                  : run_sweep_size(cfg);
      write_text(dir / (kind + ".csv"), sweep_csv(cfg, r));
      json summary = sweep_summary_json(cfg, r);
      if (cfg.kind == ExperimentKind::kRateCheck) {
        json checks = json::object();
        for (const auto& [est, slope] : r.slopes)
          checks[est] = {{"slope", slope}, {"band", {-1.4, -0.6}}, {"pass", slope >= -1.4 && slope <= -0.6}};
        summary["rate_check"] = checks;
      }
      write_text(dir / (kind + "_summary.json"), summary.dump(2) + "\n");
      std::size_t errors = 0;
      for (const auto& row : r.rows) errors += row.error.empty() ? 0 : 1;
      return errors;
    }
    case ExperimentKind::kEstimateOnce: {
      const auto data = detail::load_trial_data(cfg.source);
      const std::uint64_t stream = derive_seed(cfg.seed, {0, 0});
      auto setup = detail::setup_trial(cfg, data, cfg.alpha_grid.front(), cfg.n_te, stream, cfg.test_marginal);
      const Vector truth = ratio_from_marginals(setup.test_marginal, setup.train_marginal).ratios();
      json reports = json::object();
      std::size_t errors = 0;
      for (auto& [name, outcome] : detail::run_estimators(cfg, data, setup.train, setup.test.features(), stream)) {
        if (outcome.report) {
          json jr = to_json(*outcome.report);
          jr["mse"] = ratio_mse(outcome.report->ratio.ratios(), truth);
          reports[name] = jr;
        } else {
          reports[name] = {{"error", outcome.error}};
          ++errors;
        }
      }
      json j = {{"schema_version", kSchemaVersion},
                {"kind", kind},
                {"seed", cfg.seed},
                {"config", to_json(cfg)},
                {"test_marginal", to_json(setup.test_marginal.probs())},
                {"true_ratio", to_json(truth)},
                {"reports", reports}};
      write_text(dir / "estimate_once.json", j.dump(2) + "\n");
      return errors;
    }
    case ExperimentKind::kFederate: {
      auto out = run_federate(cfg);
      std::ostringstream nodes, trace;
      nodes << csv_header(cfg, "weighting,node,accuracy");
      trace << csv_header(cfg, "weighting,round,mean_loss,avg_accuracy");
      json runs = json::object();
      for (const auto& run : out.runs) {
        const std::string w(to_string(run.weighting));
        for (std::size_t k = 0; k < run.result.node_accuracy.size(); ++k)
          nodes << w << ',' << k << ',' << detail::format_double(run.result.node_accuracy[k]) << '\n';
        for (const auto& t : run.result.trace)
          trace << w << ',' << t.round << ',' << detail::format_double(t.mean_loss) << ','
                << detail::format_double(t.avg_accuracy) << '\n';
        runs[w] = to_json(run.result);
      }
      json j = {{"schema_version", kSchemaVersion}, {"kind", kind}, {"seed", cfg.seed}, {"config", to_json(cfg)},
                {"runs", runs}};
      if (!out.listing_weights.empty()) {
        json lw = json::array();
        for (const auto& w : out.listing_weights) lw.push_back(to_json(w));
        j["listing_variant_weights"] = lw;
      }
      write_text(dir / "federate_nodes.csv", nodes.str());
      write_text(dir / "federate_trace.csv", trace.str());
      write_text(dir / "federate_summary.json", j.dump(2) + "\n");
      return 0;
    }
  }
  return 0;
}

}  // namespace labelshift

#endif  // LABELSHIFT_EXPERIMENTS_HPP
