#include "labelshift/data.hpp"
#include "labelshift/estimators.hpp"
#include "labelshift/predictor.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace labelshift;

namespace {

Matrix rows_of(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) out(i, j++) = v;
    ++i;
  }
  return out;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

double linf(const Vector& a, const Vector& b) { return (a - b).cwiseAbs().maxCoeff(); }

// Predictions that are one-hot on the given hard labels, with a small
// margin so the floor does not change the argmax.
ProbabilityMatrix one_hot_preds(const std::vector<int>& z, std::size_t m) {
  Matrix p = Matrix::Constant(static_cast<Eigen::Index>(z.size()), static_cast<Eigen::Index>(m), 0.05 / (m - 1));
  for (std::size_t i = 0; i < z.size(); ++i) p(static_cast<Eigen::Index>(i), z[i]) = 0.95;
  return ProbabilityMatrix(p);
}

std::vector<int> labels_with_frequencies(std::initializer_list<std::pair<int, int>> counts) {
  std::vector<int> out;
  for (auto [label, n] : counts) out.insert(out.end(), static_cast<std::size_t>(n), label);
  return out;
}

}  // namespace

TEST(EmpiricalObjective, AllOnesIsZero) {
  auto inst = oracle::random_instance(3, 4, 50);
  EXPECT_NEAR(empirical_objective(Vector::Ones(4), ProbabilityMatrix(inst.rows)), 0.0, 1e-15);
}

TEST(EmpiricalObjective, HandValue) {
  ProbabilityMatrix p(rows_of({{0.8, 0.2}, {0.2, 0.8}}));
  EXPECT_DOUBLE_EQ(empirical_objective(vec({1, 1}), p), 0.0);
  // Row dots are 0.8*1.2 + 0.2*0.8 = 1.12 and 0.2*1.2 + 0.8*0.8 = 0.88.
  EXPECT_NEAR(empirical_objective(vec({1.2, 0.8}), p), (std::log(1.12) + std::log(0.88)) / 2, 1e-15);
  // Dots 0.92 and 0.68 come from r = (1.0, 0.6).
  EXPECT_NEAR(empirical_objective(vec({1.0, 0.6}), p), -0.2345, 1e-4);
}

TEST(EmpiricalObjective, RowPermutationInvariant) {
  auto inst = oracle::random_instance(4, 3, 40);
  Matrix rev = inst.rows.colwise().reverse();
  Vector r = vec({0.5, 1.3, 0.9});
  EXPECT_NEAR(empirical_objective(r, ProbabilityMatrix(inst.rows)), empirical_objective(r, ProbabilityMatrix(rev)),
              1e-14);
  EXPECT_NEAR(empirical_objective(r, ProbabilityMatrix(inst.rows)), oracle::log_likelihood(inst.rows, r), 1e-14);
}

TEST(ObjectiveGradient, FiniteDifferences) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto inst = oracle::random_instance(s, 4, 30);
    ProbabilityMatrix p(inst.rows);
    Vector r = Vector::Constant(4, 0.5) + 0.2 * Vector::Ones(4) * static_cast<double>(s % 3);
    auto num = oracle::numeric_gradient([&](const Vector& x) { return oracle::log_likelihood(inst.rows, x); }, r);
    EXPECT_LT(oracle::max_relative_error(objective_gradient(r, p), num), 1e-4);
  }
}

TEST(MllsEm, StationaryAtNoShift) {
  Matrix rows(5, 3);
  rows.rowwise() = vec({0.2, 0.3, 0.5}).transpose();
  auto rep = estimate_mlls_em(ProbabilityMatrix(rows), LabelMarginal(vec({0.2, 0.3, 0.5})));
  EXPECT_EQ(rep.iterations_used, 1u);
  EXPECT_TRUE(rep.converged);
  EXPECT_LT(linf(rep.ratio.ratios(), Vector::Ones(3)), 1e-12);
}

TEST(MllsEm, ThreeRowInstanceMatchesGridOracle) {
  Matrix rows = rows_of({{0.8, 0.2}, {0.8, 0.2}, {0.2, 0.8}});
  auto grid = oracle::grid_search_m2(rows, 0.5);
  EXPECT_NEAR(grid.r[0], 1.5556, 1e-4);
  EXPECT_NEAR(grid.r[1], 0.4444, 1e-4);
  auto rep = estimate_mlls_em(ProbabilityMatrix(rows), LabelMarginal::uniform(2));
  EXPECT_LT(linf(rep.ratio.ratios(), grid.r), 1e-3);
}

TEST(MllsEm, SymmetricInstanceIsAllOnes) {
  Matrix rows = rows_of({{0.8, 0.2}, {0.2, 0.8}});
  auto rep = estimate_mlls_em(ProbabilityMatrix(rows), LabelMarginal::uniform(2));
  EXPECT_LT(linf(rep.ratio.ratios(), Vector::Ones(2)), 1e-6);
}

TEST(MllsEm, ObjectiveIsMonotone) {
  EstimatorOptions opts;
  opts.record_trace = true;
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto inst = oracle::random_instance(s, 2 + s % 5, 60);
    auto rep = estimate_mlls_em(ProbabilityMatrix(inst.rows), LabelMarginal(inst.tr), opts);
    for (std::size_t i = 1; i < rep.objective_trace.size(); ++i)
      ASSERT_GE(rep.objective_trace[i], rep.objective_trace[i - 1] - 1e-12) << "seed " << s << " step " << i;
  }
}

TEST(MllsEm, ZeroTrainClassStaysZero) {
  auto inst = oracle::random_instance(9, 3, 40);
  auto rep = estimate_mlls_em(ProbabilityMatrix(inst.rows), LabelMarginal(vec({0.5, 0.0, 0.5})));
  EXPECT_EQ(rep.ratio[1], 0.0);
  EXPECT_NEAR(rep.ratio.ratios().dot(vec({0.5, 0.0, 0.5})), 1.0, 1e-9);
}

TEST(MllsGd, ThreeRowInstanceMatchesGridOracle) {
  Matrix rows = rows_of({{0.8, 0.2}, {0.8, 0.2}, {0.2, 0.8}});
  auto rep = estimate_mlls_gd(ProbabilityMatrix(rows), LabelMarginal::uniform(2));
  EXPECT_LT(linf(rep.ratio.ratios(), vec({1.5556, 0.4444})), 1e-3);
}

TEST(MllsGd, StaysAtOnesWithoutShift) {
  Matrix rows(4, 2);
  rows.rowwise() = vec({0.5, 0.5}).transpose();
  auto rep = estimate_mlls_gd(ProbabilityMatrix(rows), LabelMarginal::uniform(2));
  EXPECT_LT(linf(rep.ratio.ratios(), Vector::Ones(2)), 1e-12);
  EXPECT_TRUE(rep.converged);
}

TEST(MllsGd, ObjectiveNonDecreasing) {
  for (double step : {0.1, 0.05, 0.01}) {
    EstimatorOptions opts;
    opts.step_size = step;
    opts.record_trace = true;
    for (std::uint64_t s = 0; s < 20; ++s) {
      auto inst = oracle::random_instance(100 + s, 3, 50);
      auto rep = estimate_mlls_gd(ProbabilityMatrix(inst.rows), LabelMarginal(inst.tr), opts);
      for (std::size_t i = 1; i < rep.objective_trace.size(); ++i)
        ASSERT_GE(rep.objective_trace[i], rep.objective_trace[i - 1]);
    }
  }
}

TEST(MllsGd, AgreesWithEmObjective) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto inst = oracle::random_instance(200 + s, 3, 80);
    ProbabilityMatrix p(inst.rows);
    LabelMarginal tr(inst.tr);
    auto em = estimate_mlls_em(p, tr);
    auto gd = estimate_mlls_gd(p, tr);
    EXPECT_NEAR(gd.final_objective, em.final_objective, 1e-6) << s;
    EXPECT_NEAR(gd.ratio.ratios().dot(inst.tr), 1.0, 1e-6);
  }
}

TEST(MllsM2, SeededCorpusMatchesGridOracle) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto inst = oracle::random_instance(1000 + s, 2, 40);
    auto grid = oracle::grid_search_m2(inst.rows, inst.tr[0]);
    ProbabilityMatrix p(inst.rows);
    LabelMarginal tr(inst.tr);
    auto em = estimate_mlls_em(p, tr);
    auto gd = estimate_mlls_gd(p, tr);
    EXPECT_LT(linf(em.ratio.ratios(), grid.r), 1e-3) << s;
    EXPECT_LT(linf(gd.ratio.ratios(), grid.r), 1e-3) << s;
    EXPECT_NEAR(em.final_objective, gd.final_objective, 1e-6) << s;
  }
}

TEST(Bbse, DiagonalClosedForm) {
  auto val_labels = labels_with_frequencies({{0, 50}, {1, 50}});
  auto preds_val = one_hot_preds(val_labels, 2);
  auto preds_te = one_hot_preds(labels_with_frequencies({{0, 30}, {1, 70}}), 2);
  auto rep = estimate_bbse(preds_val, val_labels, preds_te, LabelMarginal::uniform(2));
  EXPECT_LT(linf(rep.ratio.ratios(), vec({0.6, 1.4})), 1e-12);
  auto rlls = estimate_rlls(preds_val, val_labels, preds_te, LabelMarginal::uniform(2), 0.0);
  EXPECT_LT(linf(rlls.ratio.ratios(), vec({0.6, 1.4})), 1e-12);
}

TEST(Bbse, NoShiftGivesOnes) {
  auto val_labels = labels_with_frequencies({{0, 40}, {1, 25}, {2, 35}});
  std::vector<int> z = val_labels;
  std::swap(z[0], z[60]);  // a few confusions keep A off-diagonal
  std::swap(z[45], z[90]);
  auto preds_val = one_hot_preds(z, 3);
  auto rep = estimate_bbse(preds_val, val_labels, preds_val, LabelMarginal(vec({0.4, 0.25, 0.35})));
  EXPECT_LT(linf(rep.ratio.ratios(), Vector::Ones(3)), 1e-9);
  for (double lambda : {0.0, 1.0, 100.0}) {
    auto r = estimate_rlls(preds_val, val_labels, preds_val, LabelMarginal(vec({0.4, 0.25, 0.35})), lambda);
    EXPECT_LT(linf(r.ratio.ratios(), Vector::Ones(3)), 1e-9);
  }
}

TEST(Bbse, NeverPredictedClassIsIllConditioned) {
  auto val_labels = labels_with_frequencies({{0, 50}, {1, 50}});
  auto preds_val = one_hot_preds(std::vector<int>(100, 0), 2);
  auto preds_te = one_hot_preds(labels_with_frequencies({{0, 30}, {1, 70}}), 2);
  try {
    estimate_bbse(preds_val, val_labels, preds_te, LabelMarginal::uniform(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIllConditioned);
  }
}

TEST(Bbse, NegativeSolutionClippedAndFeasible) {
  // Test hard labels all class 1 with an off-diagonal A pushes w_0 below 0.
  auto val_labels = labels_with_frequencies({{0, 50}, {1, 50}});
  std::vector<int> z = val_labels;
  for (int i = 0; i < 20; ++i) z[static_cast<std::size_t>(i)] = 1;
  auto rep = estimate_bbse(one_hot_preds(z, 2), val_labels, one_hot_preds(std::vector<int>(10, 1), 2),
                           LabelMarginal::uniform(2));
  EXPECT_EQ(rep.ratio[0], 0.0);
  EXPECT_NEAR(rep.ratio[1], 2.0, 1e-12);
}

TEST(Rlls, HugeLambdaReturnsOnes) {
  auto val_labels = labels_with_frequencies({{0, 50}, {1, 50}});
  auto preds_te = one_hot_preds(labels_with_frequencies({{0, 30}, {1, 70}}), 2);
  auto rep = estimate_rlls(one_hot_preds(val_labels, 2), val_labels, preds_te, LabelMarginal::uniform(2), 1e9);
  EXPECT_LT(linf(rep.ratio.ratios(), Vector::Ones(2)), 1e-3);
  EXPECT_THROW(estimate_rlls(one_hot_preds(val_labels, 2), val_labels, preds_te, LabelMarginal::uniform(2), -1.0),
               Error);
}

TEST(Vrls, ZetaZeroIsMllsBaseline) {
  auto spec = GaussianMixtureSpec::simplex(3, 3.0, 1.0);
  auto train = gen_gaussian_mixture(spec, LabelMarginal::uniform(3), 600, 1);
  auto test = gen_gaussian_mixture(spec, LabelMarginal(vec({0.6, 0.3, 0.1})), 600, 2);
  PredictorConfig cfg;
  cfg.zeta = 0.0;
  cfg.max_epochs = 10;
  cfg.seed = 3;
  auto vrls = estimate_vrls(train, test.features(), cfg);
  auto mlls = estimate_mlls_em(predict_proba(train_predictor(train, cfg), test.features()), train.empirical_marginal());
  EXPECT_TRUE(vrls.ratio.ratios() == mlls.ratio.ratios());
}

TEST(Vrls, ShiftedMixtureRecoversRatio) {
  auto spec = GaussianMixtureSpec::simplex(3, 3.0, 1.0);
  auto te_marginal = sample_dirichlet_marginal(1.0, 3, 17);
  auto train = gen_gaussian_mixture(spec, LabelMarginal::uniform(3), 3000, 1);
  auto test = gen_gaussian_mixture(spec, te_marginal, 5000, 2);
  PredictorConfig cfg;
  cfg.zeta = 1.0;
  cfg.max_epochs = 30;
  cfg.seed = 5;
  auto rep = estimate_vrls(train, test.features(), cfg);
  Vector truth = ratio_from_marginals(test.empirical_marginal(), train.empirical_marginal()).ratios();
  EXPECT_LT((rep.ratio.ratios() - truth).squaredNorm() / 3.0, 0.05);
}

TEST(Vrls, NoShiftNearOnes) {
  auto spec = GaussianMixtureSpec::simplex(3, 6.0, 1.0);
  auto train = gen_gaussian_mixture(spec, LabelMarginal::uniform(3), 20000, 4);
  auto test = gen_gaussian_mixture(spec, LabelMarginal::uniform(3), 5000, 5);
  PredictorConfig cfg;
  cfg.zeta = 1.0;
  cfg.max_epochs = 10;
  cfg.seed = 6;
  auto rep = estimate_vrls(train, test.features(), cfg);
  EXPECT_LT(linf(rep.ratio.ratios(), Vector::Ones(3)), 0.05);
}
