#include "gpstack/learners/learner.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace gpstack;

namespace {

Matrix random_matrix(Index n, Index m, std::uint64_t seed) {
  Rng rng(seed);
  Matrix X(n, m);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j) X(i, j) = 2.0 * uniform01(rng) - 1.0;
  return X;
}

Vector noisy_linear(const Matrix& X, std::uint64_t seed) {
  Rng rng(seed);
  Vector y(X.rows());
  for (Index i = 0; i < X.rows(); ++i) {
    double v = 0.3;
    for (Index j = 0; j < X.cols(); ++j) v += (j % 2 ? -1.0 : 1.0) * (1.0 + 0.5 * static_cast<double>(j)) * X(i, j);
    y[i] = v + 0.1 * (uniform01(rng) - 0.5) + 0.4 * std::sin(3.0 * X(i, 0));
  }
  return y;
}

// population-variance standardisation, written out independently of the library
Matrix standardise(const Matrix& X) {
  Matrix Z = X;
  for (Index j = 0; j < X.cols(); ++j) {
    const double mu = X.col(j).mean();
    double ss = 0.0;
    for (Index i = 0; i < X.rows(); ++i) ss += (X(i, j) - mu) * (X(i, j) - mu);
    const double sd = std::sqrt(ss / static_cast<double>(X.rows()));
    for (Index i = 0; i < X.rows(); ++i) Z(i, j) = (X(i, j) - mu) / sd;
  }
  return Z;
}

std::vector<Index> all_rows(Index n) {
  std::vector<Index> r(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) r[static_cast<std::size_t>(i)] = i;
  return r;
}

}  // namespace

// ---------------------------------------------------------------- trees and GBT

TEST(Tree, DepthOneSplitMatchesBruteForce) {
  const Index n = 41;
  Matrix X(n, 1);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    X(i, 0) = -1.0 + 0.05 * static_cast<double>(i);
    y[i] = X(i, 0) > 0 ? 1.0 : 0.0;
  }
  // brute force: best threshold by SSE over all midpoints
  double best_sse = std::numeric_limits<double>::infinity(), best_thr = 0.0;
  for (Index k = 0; k + 1 < n; ++k) {
    const double thr = 0.5 * (X(k, 0) + X(k + 1, 0));
    double sl = 0, sr = 0, nl = 0, nr = 0;
    for (Index i = 0; i < n; ++i) (X(i, 0) <= thr ? (sl += y[i], nl += 1) : (sr += y[i], nr += 1));
    double sse = 0;
    for (Index i = 0; i < n; ++i) {
      const double mu = X(i, 0) <= thr ? sl / nl : sr / nr;
      sse += (y[i] - mu) * (y[i] - mu);
    }
    if (sse < best_sse) best_sse = sse, best_thr = thr;
  }
  const auto m = fit_gbt(X, y, GbtParams{1, 1.0, 1, 1.0, 1.0, 1}, 3);
  ASSERT_EQ(m.trees.size(), 1u);
  const auto& nodes = m.trees[0].nodes();
  ASSERT_EQ(nodes.size(), 3u);
  EXPECT_NEAR(nodes[0].threshold, best_thr, 1e-12);
  const Vector pred = m.predict(X);
  for (Index i = 0; i < n; ++i) EXPECT_NEAR(pred[i], y[i], 1e-12);
}

TEST(Gbt, ZeroTreesPredictsMean) {
  const Matrix X = random_matrix(30, 3, 1);
  const Vector y = noisy_linear(X, 2);
  const auto m = fit_gbt(X, y, GbtParams{0, 0.1, 3, 1.0, 1.0, 1}, 0);
  const Vector p = m.predict(random_matrix(7, 3, 9));
  for (Index i = 0; i < p.size(); ++i) EXPECT_DOUBLE_EQ(p[i], y.mean());
}

TEST(Gbt, DeepSingleTreeInterpolates) {
  const Matrix X = random_matrix(25, 2, 4);
  const Vector y = noisy_linear(X, 5);
  const auto m = fit_gbt(X, y, GbtParams{1, 1.0, 64, 1.0, 1.0, 1}, 0);
  const Vector p = m.predict(X);
  for (Index i = 0; i < y.size(); ++i) EXPECT_NEAR(p[i], y[i], 1e-12);
}

TEST(Gbt, TrainingLossNonIncreasingWithoutSubsampling) {
  const Matrix X = random_matrix(80, 4, 7);
  const Vector y = noisy_linear(X, 8);
  const auto m = fit_gbt(X, y, GbtParams{40, 0.3, 2, 1.0, 1.0, 2}, 0);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s <= m.trees.size(); ++s) {
    const double loss = (m.predict(X, s) - y).squaredNorm();
    EXPECT_LE(loss, prev + 1e-12) << "stage " << s;
    prev = loss;
  }
}

TEST(Gbt, ConstantResponseGivesConstantModel) {
  const Matrix X = random_matrix(20, 2, 3);
  const Vector y = Vector::Constant(20, 1.25);
  const auto m = fit_gbt(X, y, GbtParams{}, 1);
  const Vector p = m.predict(random_matrix(5, 2, 4));
  for (Index i = 0; i < p.size(); ++i) EXPECT_DOUBLE_EQ(p[i], 1.25);
}

TEST(Gbt, SingleRowRejected) {
  EXPECT_THROW(fit_gbt(Matrix::Zero(1, 2), Vector::Zero(1), GbtParams{}, 0), ValidationError);
}

// ---------------------------------------------------------------- random forest

TEST(RandomForest, PredictionWithinTreeRange) {
  const Matrix X = random_matrix(60, 4, 11);
  const Vector y = noisy_linear(X, 12);
  const auto m = fit_rf(X, y, RfParams{25, 0, 2, 8, true}, 5);
  const Matrix Xt = random_matrix(200, 4, 13);
  const Matrix per = m.per_tree(Xt);
  const Vector p = m.predict(Xt);
  for (Index i = 0; i < Xt.rows(); ++i) {
    EXPECT_GE(p[i], per.row(i).minCoeff() - 1e-12);
    EXPECT_LE(p[i], per.row(i).maxCoeff() + 1e-12);
  }
}

TEST(RandomForest, SingleUnbootstrappedTreeEqualsRegressionTree) {
  const Matrix X = random_matrix(40, 3, 21);
  const Vector y = noisy_linear(X, 22);
  const auto forest = fit_rf(X, y, RfParams{1, 3, 3, 5, false}, 9);
  Rng rng(1);
  const auto tree = fit_tree(X, y, all_rows(40), TreeParams{5, 3, 0}, rng);
  const Matrix Xt = random_matrix(50, 3, 23);
  EXPECT_EQ(forest.predict(Xt), tree.predict(Xt));
}

TEST(RandomForest, SeededRefitIsIdentical) {
  const Matrix X = random_matrix(50, 5, 31);
  const Vector y = noisy_linear(X, 32);
  const auto a = fit_rf(X, y, RfParams{10, 0, 3, 10, true}, 77);
  const auto b = fit_rf(X, y, RfParams{10, 0, 3, 10, true}, 77);
  EXPECT_EQ(a.predict(X), b.predict(X));
}

TEST(RandomForest, ZeroTreesRejected) {
  EXPECT_THROW(LearnerSpec::make(LearnerKind::rf, {{"n_trees", 0}}), ValidationError);
}

// ---------------------------------------------------------------- elastic net

TEST(ElasticNet, UnpenalisedMatchesOls) {
  const Matrix X = random_matrix(50, 4, 41);
  const Vector y = noisy_linear(X, 42);
  Matrix D(50, 5);
  D.col(0).setOnes();
  D.rightCols(4) = X;
  const Vector ols = (D.transpose() * D).ldlt().solve(D.transpose() * y);  // normal equations
  const auto m = detail::enet_fixed(X, y, 0.0, 0.0, EnetParams{});
  EXPECT_NEAR(m.linear.intercept, ols[0], 1e-8);
  for (Index j = 0; j < 4; ++j) EXPECT_NEAR(m.linear.coef[j], ols[j + 1], 1e-8);
}

TEST(ElasticNet, DefaultSpecIsOls) {
  const Matrix X = random_matrix(30, 3, 43);
  const Vector y = noisy_linear(X, 44);
  const auto model = fit_learner(X, {"a", "b", "c"}, y, LearnerSpec::make(LearnerKind::enet));
  const auto ref = fit_linear(X, y);
  const Vector p = model.predict(X), q = ref.predict(X);
  for (Index i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-8);
}

TEST(ElasticNet, RidgeMatchesClosedForm) {
  const Matrix X = random_matrix(40, 5, 45);
  const Vector y = noisy_linear(X, 46);
  const Matrix Z = standardise(X);
  const Vector yc = y.array() - y.mean();
  for (double l2 : {0.1, 1.0, 25.0}) {
    const Matrix A = Z.transpose() * Z + l2 * Matrix::Identity(5, 5);
    const Vector ridge = A.ldlt().solve(Z.transpose() * yc);
    const auto m = detail::enet_fixed(X, y, 0.0, l2, EnetParams{});
    for (Index j = 0; j < 5; ++j) EXPECT_NEAR(m.beta_standardized[j], ridge[j], 1e-8) << "lambda2=" << l2;
  }
}

TEST(ElasticNet, HugeL1ZeroesSlopes) {
  const Matrix X = random_matrix(30, 3, 47);
  const Vector y = noisy_linear(X, 48);
  const auto m = detail::enet_fixed(X, y, 1e9, 0.0, EnetParams{});
  EXPECT_TRUE(m.linear.coef.isZero(0.0));
  EXPECT_DOUBLE_EQ(m.linear.intercept, y.mean());
}

TEST(ElasticNet, KktConditionsHold) {
  const Matrix X = random_matrix(60, 6, 49);
  const Vector y = noisy_linear(X, 50);
  const double l1 = 8.0, l2 = 0.5;
  const auto m = detail::enet_fixed(X, y, l1, l2, EnetParams{});
  const Matrix Z = standardise(X);
  const Vector r = (y.array() - y.mean()).matrix() - Z * m.beta_standardized;
  int zeros = 0;
  for (Index j = 0; j < 6; ++j) {
    const double b = m.beta_standardized[j];
    const double grad = -2.0 * Z.col(j).dot(r) + 2.0 * l2 * b;
    if (b == 0.0) {
      ++zeros;
      EXPECT_LE(std::abs(grad), l1 + 1e-6);
    } else {
      EXPECT_NEAR(grad, -l1 * (b > 0 ? 1.0 : -1.0), 1e-6);
    }
  }
  EXPECT_LT(zeros, 6);
}

TEST(ElasticNet, NonFiniteInputRejected) {
  Matrix X = random_matrix(10, 2, 51);
  X(3, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(fit_enet(X, Vector::Zero(10), EnetParams{}, 0), ValidationError);
}

TEST(ElasticNet, PathSelectionRuns) {
  const Matrix X = random_matrix(80, 5, 52);
  const Vector y = noisy_linear(X, 53);
  EnetParams p;
  p.path_length = 20;
  const auto m = fit_enet(X, y, p, 3);
  EXPECT_GT(m.lambda1 + m.lambda2, 0.0);
  EXPECT_LT((m.predict(X) - y).squaredNorm() / 80.0, y.array().square().mean());
}

// ---------------------------------------------------------------- GAM

TEST(Gam, ReproducesLine) {
  const Index n = 60;
  Matrix X(n, 1);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    X(i, 0) = static_cast<double>(i) / 7.0;
    y[i] = 2.0 - 0.75 * X(i, 0);
  }
  const auto m = fit_gam(X, y, GamParams{});
  EXPECT_LT((m.predict(X) - y).squaredNorm() / static_cast<double>(n), 1e-6);
}

TEST(Gam, SineCorrelation) {
  const Index n = 200;
  Matrix X(n, 1);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    X(i, 0) = 2.0 * 3.141592653589793 * static_cast<double>(i) / (n - 1);
    y[i] = std::sin(X(i, 0));
  }
  GamParams p;
  p.basis_size = 10;
  const Vector f = fit_gam(X, y, p).predict(X);
  const Vector a = f.array() - f.mean(), b = y.array() - y.mean();
  EXPECT_GT(a.dot(b) / (a.norm() * b.norm()), 0.99);
}

TEST(Gam, HugePenaltyLeavesLinearFit) {
  const Matrix X = random_matrix(70, 2, 61);
  const Vector y = noisy_linear(X, 62);
  GamParams p;
  p.lambda = 1e12;
  const Vector f = fit_gam(X, y, p).predict(X);
  const Vector g = fit_linear(X, y).predict(X);
  EXPECT_LT((f - g).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Gam, BackfittingObjectiveNonIncreasing) {
  const Matrix X = random_matrix(90, 3, 63);
  const Vector y = noisy_linear(X, 64);
  GamTrace trace;
  fit_gam(X, y, GamParams{}, &trace);
  ASSERT_GE(trace.objective.size(), 2u);
  for (std::size_t k = 1; k < trace.objective.size(); ++k)
    EXPECT_LE(trace.objective[k], trace.objective[k - 1] * (1 + 1e-12) + 1e-12);
}

TEST(Gam, TermsCentredOnTrainingData) {
  const Matrix X = random_matrix(50, 2, 65);
  const Vector y = noisy_linear(X, 66);
  const auto m = fit_gam(X, y, GamParams{});
  for (const auto& t : m.terms) {
    double s = 0.0;
    for (Index i = 0; i < X.rows(); ++i) s += t.eval(X(i, t.column));
    EXPECT_NEAR(s / 50.0, 0.0, 1e-8);
  }
}

TEST(Gam, FewDistinctValuesShrinksBasisWithWarning) {
  Matrix X(30, 1);
  Vector y(30);
  for (Index i = 0; i < 30; ++i) X(i, 0) = static_cast<double>(i % 3), y[i] = X(i, 0);
  const auto m = fit_gam(X, y, GamParams{});
  EXPECT_FALSE(m.warnings.empty());
  EXPECT_LT((m.predict(X) - y).cwiseAbs().maxCoeff(), 1e-6);
}

// ---------------------------------------------------------------- MARS

TEST(Mars, HingeDefinition) {
  EXPECT_DOUBLE_EQ(hinge(3.0, 2.0, 1), 1.0);
  EXPECT_DOUBLE_EQ(hinge(2.0, 3.0, 1), 0.0);
  EXPECT_DOUBLE_EQ(hinge(2.0, 3.0, -1), 1.0);
}

TEST(Mars, RecoversPlantedKnot) {
  const Index n = 101;
  const double spacing = 0.01;
  Matrix X(n, 1);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    X(i, 0) = spacing * static_cast<double>(i);
    y[i] = std::max(0.0, X(i, 0) - 0.5);
  }
  MarsParams p;
  p.max_knots = 0;
  const auto m = fit_mars(X, y, p);
  EXPECT_LT((m.predict(X) - y).squaredNorm() / static_cast<double>(n), 1e-8);
  bool found = false;
  for (const auto& b : m.basis)
    for (const auto& f : b.factors) found = found || std::abs(f.knot - 0.5) <= spacing + 1e-12;
  EXPECT_TRUE(found);
}

TEST(Mars, DegreeOneHasNoProducts) {
  const Matrix X = random_matrix(80, 3, 71);
  Vector y(80);
  for (Index i = 0; i < 80; ++i) y[i] = std::max(0.0, X(i, 0)) * std::max(0.0, X(i, 1)) + X(i, 2);
  const auto m = fit_mars(X, y, MarsParams{});
  for (const auto& b : m.basis) EXPECT_LE(b.factors.size(), 1u);
  MarsParams two;
  two.max_degree = 2;
  std::size_t widest = 0;
  for (const auto& b : fit_mars(X, y, two).basis) widest = std::max(widest, b.factors.size());
  EXPECT_EQ(widest, 2u);
}

TEST(Mars, BackwardPassNeverIncreasesGcv) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Matrix X = random_matrix(70, 3, 80 + s);
    const Vector y = noisy_linear(X, 90 + s);
    MarsTrace t;
    fit_mars(X, y, MarsParams{}, &t);
    EXPECT_LE(t.final_gcv, t.forward_gcv);
  }
}

TEST(Mars, MaxTermsBelowOneRejected) {
  EXPECT_THROW(LearnerSpec::make(LearnerKind::mars, {{"max_terms", 0}}), ValidationError);
}

// ---------------------------------------------------------------- shared contract

class AllLearners : public ::testing::TestWithParam<LearnerKind> {};

TEST_P(AllLearners, DeterministicAndShapeChecked) {
  const Matrix X = random_matrix(60, 3, 101);
  const Vector y = noisy_linear(X, 102);
  const std::vector<std::string> cols{"a", "b", "c"};
  std::map<std::string, double> small;
  if (GetParam() == LearnerKind::rf || GetParam() == LearnerKind::gbt) small["n_trees"] = 20;
  const auto spec = LearnerSpec::make(GetParam(), small, 17);
  const auto m1 = fit_learner(X, cols, y, spec);
  const auto m2 = fit_learner(X, cols, y, spec);
  const Matrix Xt = random_matrix(9, 3, 103);
  EXPECT_EQ(m1.predict(Xt), m2.predict(Xt));
  EXPECT_EQ(m1.predict(Xt), m1.predict(Xt));
  EXPECT_EQ(m1.predict(Matrix(Xt.topRows(1))).size(), 1);
  EXPECT_THROW(m1.predict(Matrix::Zero(2, 4)), SchemaError);
  CovariateMatrix wrong{Xt, {{"a", 0, CovariateKind::static_field}, {"c", 0, CovariateKind::static_field},
                             {"d", 0, CovariateKind::static_field}}};
  try {
    m1.predict(wrong);
    FAIL();
  } catch (const SchemaError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("missing: [b]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("extra: [d]"), std::string::npos) << msg;
  }
}

TEST_P(AllLearners, JsonRoundTripReproducesPredictions) {
  const Matrix X = random_matrix(50, 2, 111);
  const Vector y = noisy_linear(X, 112);
  std::map<std::string, double> small;
  if (GetParam() == LearnerKind::rf || GetParam() == LearnerKind::gbt) small["n_trees"] = 15;
  const auto m = fit_learner(X, {"u", "v"}, y, LearnerSpec::make(GetParam(), small, 5));
  const auto text = learner_to_json(m).dump();
  const auto back = learner_from_json(nlohmann::json::parse(text));
  const Matrix Xt = random_matrix(20, 2, 113);
  EXPECT_EQ(m.predict(Xt), back.predict(Xt));
  EXPECT_EQ(back.columns(), m.columns());
}

INSTANTIATE_TEST_SUITE_P(Kinds, AllLearners,
                         ::testing::Values(LearnerKind::gbt, LearnerKind::rf, LearnerKind::enet, LearnerKind::gam,
                                           LearnerKind::mars, LearnerKind::linear_mean),
                         [](const auto& info) { return to_string(info.param) == "linear-mean" ? std::string("linear")
                                                                                               : to_string(info.param); });

TEST(LearnerSpecTest, UnknownKeyRejected) {
  EXPECT_THROW(LearnerSpec::make(LearnerKind::gbt, {{"depth", 2}}), ValidationError);
}

TEST(LearnerSpecTest, RangesEnforced) {
  EXPECT_THROW(LearnerSpec::make(LearnerKind::gbt, {{"shrinkage", 0}}), ValidationError);
  EXPECT_THROW(LearnerSpec::make(LearnerKind::gbt, {{"shrinkage", 1.5}}), ValidationError);
  EXPECT_THROW(LearnerSpec::make(LearnerKind::gbt, {{"max_depth", 0}}), ValidationError);
  EXPECT_THROW(LearnerSpec::make(LearnerKind::gbt, {{"max_depth", 2.5}}), ValidationError);
  EXPECT_NO_THROW(LearnerSpec::make(LearnerKind::gbt, {{"shrinkage", 1}}));
}

TEST(LearnerSpecTest, HigherFormatVersionFails) {
  nlohmann::json j{{"format_version", kModelFormatVersion + 1}};
  EXPECT_THROW(check_format_version(j), Error);
}
