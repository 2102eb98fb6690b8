// Acceptance checks. Prints one line per criterion:
//   AC-n PASS|FAIL|SKIP  <measured values>  (<seconds>s, budget <limit>s)
// Arguments restrict the run to the named criteria, e.g. `acceptance AC-1 AC-4`.
// AC-8 needs LABELSHIFT_MNIST_DIR pointing at the four MNIST IDX files.
// Exit status is 1 when any criterion fails.

#include "labelshift/labelshift.hpp"
#include "support/oracles.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

using namespace labelshift;

namespace {

struct Outcome {
  enum class Status { kPass, kFail, kSkip };
  Status status;
  std::string detail;
};

Outcome verdict(bool ok, const std::string& detail) {
  return {ok ? Outcome::Status::kPass : Outcome::Status::kFail, detail};
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

double linf(const Vector& a, const Vector& b) { return (a - b).cwiseAbs().maxCoeff(); }

// Oracle equivalence on a seeded two-class corpus.
Outcome ac1() {
  double worst_em = 0.0, worst_gd = 0.0, worst_obj = 0.0;
  const int instances = 24;
  for (int s = 0; s < instances; ++s) {
    auto inst = oracle::random_instance(5000 + static_cast<std::uint64_t>(s), 2, 20 + 10 * static_cast<std::size_t>(s));
    auto grid = oracle::grid_search_m2(inst.rows, inst.tr[0]);
    ProbabilityMatrix p(inst.rows);
    LabelMarginal tr(inst.tr);
    auto em = estimate_mlls_em(p, tr);
    auto gd = estimate_mlls_gd(p, tr);
    worst_em = std::max(worst_em, linf(em.ratio.ratios(), grid.r));
    worst_gd = std::max(worst_gd, linf(gd.ratio.ratios(), grid.r));
    worst_obj = std::max(worst_obj, std::abs(em.final_objective - gd.final_objective));
  }
  return verdict(worst_em < 1e-3 && worst_gd < 1e-3 && worst_obj < 1e-6,
                 std::to_string(instances) + " instances; max Linf EM=" + fmt(worst_em) + " GD=" + fmt(worst_gd) +
                     " vs grid (<1e-3); max |obj EM-GD|=" + fmt(worst_obj) + " (<1e-6)");
}

// Rate check: log-log slope of mean VRLS ratio MSE against n_te.
Outcome ac2() {
  ExperimentConfig c;
  c.kind = ExperimentKind::kRateCheck;
  c.estimators = {"vrls", "mlls_em"};
  c.trials = 50;
  c.seed = 1;
  c.n_tr = 10000;
  c.alpha_grid = {1.0};
  c.n_te_grid = {250, 500, 1000, 2000, 4000, 8000};
  c.predictor.max_epochs = 20;
  auto r = run_sweep_size(c);
  const double slope = r.slopes.at("vrls");
  return verdict(slope >= -1.4 && slope <= -0.6, "VRLS slope=" + fmt(slope) + " in [-1.4,-0.6]; MLLS-EM slope=" +
                                                     fmt(r.slopes.at("mlls_em")) + " (reference)");
}

// VRLS against unregularized MLLS-EM over an alpha sweep.
Outcome ac3() {
  ExperimentConfig c;
  c.kind = ExperimentKind::kSweepAlpha;
  c.estimators = {"mlls_em", "vrls"};
  c.trials = 100;
  c.seed = 0;
  c.n_tr = 300;
  c.n_te = 5000;
  c.alpha_grid = {0.1, 1.0, 10.0};
  c.source.classes = 3;
  c.source.dim = 10;
  c.source.separation = 2.0;
  c.predictor.architecture = Architecture::mlp(32);
  c.predictor.max_epochs = 300;
  c.vrls_zeta = 1.0;
  auto r = run_sweep_alpha(c);
  int wins = 0;
  bool strict_small = false;
  std::ostringstream os;
  for (double a : c.alpha_grid) {
    const double v = find_cell(r, "vrls", a)->summary.mean;
    const double m = find_cell(r, "mlls_em", a)->summary.mean;
    wins += v <= m;
    if (a == 0.1) strict_small = v < m;
    os << "alpha=" << fmt(a, 2) << " VRLS=" << fmt(v) << " MLLS=" << fmt(m) << "; ";
  }
  os << "VRLS<=MLLS in " << wins << "/3 (need >=2, strict at 0.1)";
  return verdict(wins >= 2 && strict_small, os.str());
}

// Confusion-matrix estimators on separable data.
Outcome ac4() {
  auto spec = GaussianMixtureSpec::simplex(3, 8.0, 1.0);  // class means 8 sigma apart
  auto tr = LabelMarginal::uniform(3);
  Vector te_probs(3);
  te_probs << 0.6, 0.3, 0.1;
  auto train = gen_gaussian_mixture(spec, tr, 10000, derive_seed(4, {1}));
  auto test = gen_gaussian_mixture(spec, LabelMarginal(te_probs), 10000, derive_seed(4, {2}));
  PredictorConfig pc;
  pc.zeta = 0.0;
  pc.max_epochs = 20;
  pc.seed = 4;
  auto pred = train_predictor(train, pc);
  auto pv = predict_proba(pred, train.features());
  auto pt = predict_proba(pred, test.features());
  const auto tr_emp = train.empirical_marginal();
  const Vector truth = ratio_from_marginals(test.empirical_marginal(), tr_emp).ratios();
  auto bbse = estimate_bbse(pv, train.labels(), pt, tr_emp);
  auto rlls0 = estimate_rlls(pv, train.labels(), pt, tr_emp, 0.0);
  auto rlls_big = estimate_rlls(pv, train.labels(), pt, tr_emp, 1e9);
  const double e1 = linf(bbse.ratio.ratios(), truth);
  const double e2 = linf(rlls0.ratio.ratios(), bbse.ratio.ratios());
  const double e3 = linf(rlls_big.ratio.ratios(), Vector::Ones(3));
  return verdict(e1 <= 0.05 && e2 <= 1e-6 && e3 <= 1e-3, "BBSE vs oracle Linf=" + fmt(e1) + " (<=0.05); RLLS(0) vs BBSE=" +
                                                              fmt(e2) + " (<=1e-6); RLLS(1e9) vs ones=" + fmt(e3) +
                                                              " (<=1e-3)");
}

FederationConfig ac5_config(std::uint64_t seed) {
  auto lm = [](double a, double b, double c) {
    Vector v(3);
    v << a, b, c;
    return LabelMarginal(v);
  };
  FederationConfig cfg;
  cfg.scenario = Scenario::kLsMulti;
  cfg.nodes = {{lm(0.8, 0.1, 0.1), lm(0.1, 0.1, 0.8), 1000, 1000, derive_seed(seed, {100})},
               {lm(0.8, 0.1, 0.1), lm(0.1, 0.8, 0.1), 1000, 1000, derive_seed(seed, {101})},
               {lm(0.1, 0.8, 0.1), lm(0.1, 0.1, 0.8), 1000, 1000, derive_seed(seed, {102})}};
  cfg.rounds = 300;
  cfg.local_steps = 1;
  cfg.seed = seed;
  cfg.global_model.seed = seed;
  cfg.local_predictor.seed = seed;
  return cfg;
}

// IW-ERM gains over the unweighted baseline on a three-node shift scenario.
Outcome ac5() {
  std::vector<double> gain, gap;
  std::ostringstream os;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto fed = build_federation(ac5_config(seed), GaussianMixtureSpec::simplex(3, 3.0, 1.0));
    const double none = run_federation(fed, Weighting::kNone).avg_accuracy;
    const double est = run_federation(fed, Weighting::kEstimatedRatios).avg_accuracy;
    const double truth = run_federation(fed, Weighting::kTrueRatios).avg_accuracy;
    gain.push_back(100.0 * (truth - none));
    gap.push_back(100.0 * std::abs(est - truth));
    os << "[" << fmt(none, 3) << "," << fmt(est, 3) << "," << fmt(truth, 3) << "]";
  }
  const double g = median(gain), d = median(gap);
  return verdict(g >= 5.0 && d <= 3.0, "median gain true-vs-none=" + fmt(g, 3) + " pts (>=5); median |est-true|=" +
                                           fmt(d, 3) + " pts (<=3); per seed [none,est,true]=" + os.str());
}

// No-shift identities.
Outcome ac6() {
  auto spec = GaussianMixtureSpec::simplex(3, 6.0, 1.0);
  auto uniform = LabelMarginal::uniform(3);
  double worst = 0.0;
  std::string worst_name;
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto train = gen_gaussian_mixture(spec, uniform, 20000, derive_seed(s, {1}));
    auto test = gen_gaussian_mixture(spec, uniform, 5000, derive_seed(s, {2}));
    PredictorConfig pc;
    pc.max_epochs = 10;
    pc.seed = s;
    pc.zeta = 0.0;
    auto plain = train_predictor(train, pc);
    auto pv = predict_proba(plain, train.features());
    auto pt = predict_proba(plain, test.features());
    const auto tr = train.empirical_marginal();
    EstimatorOptions gd;
    gd.method = Method::kMllsGd;
    pc.zeta = 1.0;
    std::vector<std::pair<std::string, Vector>> got = {
        {"bbse", estimate_bbse(pv, train.labels(), pt, tr).ratio.ratios()},
        {"rlls", estimate_rlls(pv, train.labels(), pt, tr, 0.0).ratio.ratios()},
        {"mlls_em", estimate_mlls_em(pt, tr).ratio.ratios()},
        {"mlls_gd", estimate_mlls_gd(pt, tr).ratio.ratios()},
        {"vrls", estimate_vrls(train, test.features(), pc).ratio.ratios()},
        {"vrls_gd", estimate_vrls(train, test.features(), pc, gd).ratio.ratios()}};
    for (const auto& [name, r] : got) {
      const double e = linf(r, Vector::Ones(3));
      if (e > worst) worst = e, worst_name = name + "@seed" + std::to_string(s);
    }
  }

  // Weighting identity. K=1 gives exactly unit weights; K=2 with equal
  // dyadic marginals gives weights of exactly 2, which the normalize flag
  // divides back to 1.
  bool bitwise = true;
  {
    FederationConfig cfg;
    cfg.scenario = Scenario::kNoLs;
    Vector p(3);
    p << 0.2, 0.3, 0.5;
    cfg.nodes = {{LabelMarginal(p), LabelMarginal(p), 800, 400, 1}};
    cfg.rounds = 100;
    auto fed = build_federation(cfg, spec);
    bitwise &= run_federation(fed, Weighting::kTrueRatios).parameters == run_federation(fed, Weighting::kNone).parameters;
  }
  {
    FederationConfig cfg;
    cfg.scenario = Scenario::kNoLs;
    auto u = LabelMarginal::uniform(4);
    cfg.nodes = {{u, u, 800, 400, 1}, {u, u, 800, 400, 2}};
    cfg.rounds = 100;
    cfg.normalize_weights = true;
    auto fed = build_federation(cfg, GaussianMixtureSpec::simplex(4, 3.0, 1.0));
    bitwise &= run_federation(fed, Weighting::kTrueRatios).parameters == run_federation(fed, Weighting::kNone).parameters;
  }
  return verdict(worst <= 0.05 && bitwise, "max Linf to ones over 6 estimators x 5 seeds=" + fmt(worst) + " (" +
                                               worst_name + ", <=0.05); true_ratios==none bitwise: " +
                                               (bitwise ? "yes" : "no"));
}

// Gradient checks and EM monotonicity.
Outcome ac7() {
  double worst_pred = 0.0;
  for (auto arch : {Architecture::linear(), Architecture::mlp(6)})
    for (auto penalty : {PenaltyInput::kSoftmaxOfProbs, PenaltyInput::kSoftmaxOfLogits})
      for (double zeta : {0.0, 1.0, 5.0}) {
        auto data = gen_gaussian_mixture(GaussianMixtureSpec::simplex(3, 2.0, 1.0, 4), LabelMarginal::uniform(3), 8, 31);
        auto pred = Predictor::initialize(arch, 3, 4, 32);
        auto analytic = pred.loss_and_gradient(data.features(), data.labels(), zeta, {}, penalty).grad;
        auto numeric = oracle::numeric_gradient(
            [&](const Vector& t) {
              return pred.with_parameters(t).loss_and_gradient(data.features(), data.labels(), zeta, {}, penalty).loss;
            },
            pred.parameters());
        worst_pred = std::max(worst_pred, oracle::max_relative_error(analytic, numeric));
      }
  double worst_obj = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto inst = oracle::random_instance(700 + s, 4, 30);
    Vector r = Vector::Constant(4, 0.7) + 0.1 * Vector::LinSpaced(4, 0.0, 3.0);
    auto numeric = oracle::numeric_gradient([&](const Vector& x) { return oracle::log_likelihood(inst.rows, x); }, r);
    worst_obj = std::max(worst_obj, oracle::max_relative_error(objective_gradient(r, ProbabilityMatrix(inst.rows)), numeric));
  }
  int monotone = 0;
  EstimatorOptions opts;
  opts.record_trace = true;
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto inst = oracle::random_instance(900 + s, 2 + s % 5, 80);
    auto rep = estimate_mlls_em(ProbabilityMatrix(inst.rows), LabelMarginal(inst.tr), opts);
    bool ok = true;
    for (std::size_t i = 1; i < rep.objective_trace.size(); ++i)
      ok &= rep.objective_trace[i] >= rep.objective_trace[i - 1] - 1e-12;
    monotone += ok;
  }
  return verdict(worst_pred < 1e-4 && worst_obj < 1e-4 && monotone == 100,
                 "predictor grad rel err=" + fmt(worst_pred) + ", objective grad rel err=" + fmt(worst_obj) +
                     " (<1e-4); EM monotone on " + std::to_string(monotone) + "/100");
}

// Optional MNIST alpha sweep.
Outcome ac8() {
  const char* dir = std::getenv("LABELSHIFT_MNIST_DIR");
  if (!dir) return {Outcome::Status::kSkip, "set LABELSHIFT_MNIST_DIR to the MNIST IDX directory to run"};
  const std::filesystem::path d(dir);
  ExperimentConfig c;
  c.kind = ExperimentKind::kSweepAlpha;
  c.estimators = {"mlls_em", "vrls"};
  c.trials = 20;
  c.seed = 0;
  c.n_te = 5000;
  c.n_tr = 10000;
  c.alpha_grid = {0.1, 1.0, 10.0};
  c.source.kind = DataSource::Kind::kIdx;
  c.source.classes = 10;
  c.source.train_images = (d / "train-images-idx3-ubyte").string();
  c.source.train_labels = (d / "train-labels-idx1-ubyte").string();
  c.source.test_images = (d / "t10k-images-idx3-ubyte").string();
  c.source.test_labels = (d / "t10k-labels-idx1-ubyte").string();
  c.predictor.architecture = Architecture::mlp(128);
  c.predictor.max_epochs = 20;
  for (const auto* p : {&c.source.train_images, &c.source.train_labels, &c.source.test_images, &c.source.test_labels})
    if (!std::filesystem::exists(*p)) return {Outcome::Status::kSkip, "missing " + *p};
  auto r = run_sweep_alpha(c);
  const double v = find_cell(r, "vrls", 0.1)->summary.mean;
  const double m = find_cell(r, "mlls_em", 0.1)->summary.mean;
  return verdict(v <= m, "alpha=0.1 VRLS=" + fmt(v) + " MLLS-EM=" + fmt(m));
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    std::string name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all = {{"AC-1", 10, ac1},  {"AC-2", 300, ac2}, {"AC-3", 600, ac3},
                                      {"AC-4", 30, ac4},  {"AC-5", 300, ac5}, {"AC-6", 60, ac6},
                                      {"AC-7", 60, ac7},  {"AC-8", 1800, ac8}};
  std::set<std::string> wanted(argv + 1, argv + argc);
  bool failed = false;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.name)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {Outcome::Status::kFail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (o.status == Outcome::Status::kPass && secs > c.budget_s) {
      o.status = Outcome::Status::kFail;
      o.detail += "; over time budget";
    }
    const char* tag = o.status == Outcome::Status::kPass ? "PASS" : o.status == Outcome::Status::kFail ? "FAIL" : "SKIP";
    failed |= o.status == Outcome::Status::kFail;
    std::cout << c.name << ' ' << tag << "  " << o.detail << "  (" << fmt(secs, 3) << "s, budget " << c.budget_s << "s)"
              << std::endl;
  }
  return failed ? 1 : 0;
}
