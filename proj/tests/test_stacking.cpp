#include "gpstack/stacking.hpp"
#include "gpstack/synth.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

using namespace gpstack;

namespace {

struct Problem {
  CovariateMatrix X;
  Vector y;
  std::vector<SpaceTimePoint> pts;
};

Problem small_problem(int n, std::uint64_t seed, Regime regime = Regime::balanced) {
  ScenarioConfig c;
  c.n_surveys = n;
  c.nx = c.ny = 12;
  c.months = 3;
  c.n_static = 2;
  c.n_dynamic = 1;
  c.regime = regime;
  c.seed = seed;
  const auto d = generate(c);
  return {assemble_design(d.surveys, d.stack), responses(d.surveys), survey_points(d.surveys)};
}

LearnerSpec mean_learner() { return LearnerSpec::make(LearnerKind::gbt, {{"n_trees", 0}}); }

std::vector<LearnerSpec> quick_learners() {
  return {LearnerSpec::make(LearnerKind::gbt, {{"n_trees", 30}}, 1), LearnerSpec::make(LearnerKind::enet, {}, 2),
          LearnerSpec::make(LearnerKind::mars, {}, 3)};
}

GpFitConfig quick_gp() {
  GpFitConfig g;
  g.optimiser = NelderMeadOptions{150, 1e-4, 1e-4, 0.7, 0};
  return g;
}

}  // namespace

// ---------------------------------------------------------------- folds

TEST(Folds, TenIntoFive) {
  const auto plan = make_folds(10, 5, 1, 0);
  for (int f = 0; f < 5; ++f) EXPECT_EQ(plan.test_rows(f).size(), 2u);
}

TEST(Folds, SevenIntoThree) {
  const auto plan = make_folds(7, 3, 9, 2);
  std::vector<std::size_t> sizes;
  for (int f = 0; f < 3; ++f) sizes.push_back(plan.test_rows(f).size());
  std::sort(sizes.begin(), sizes.end());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{2, 2, 3}));
}

TEST(Folds, DeterministicAndBalanced) {
  for (Index n : {5, 17, 64, 401})
    for (int v : {2, 3, 5}) {
      const auto a = make_folds(n, v, 42, 1), b = make_folds(n, v, 42, 1);
      EXPECT_EQ(a.assignment, b.assignment);
      std::size_t lo = static_cast<std::size_t>(n), hi = 0;
      for (int f = 0; f < v; ++f) {
        lo = std::min(lo, a.test_rows(f).size());
        hi = std::max(hi, a.test_rows(f).size());
        EXPECT_EQ(a.test_rows(f).size() + a.train_rows(f).size(), static_cast<std::size_t>(n));
      }
      EXPECT_GE(lo, 1u);
      EXPECT_LE(hi - lo, 1u);
    }
  EXPECT_NE(make_folds(50, 5, 42, 0).assignment, make_folds(50, 5, 42, 1).assignment);
  EXPECT_NE(make_folds(50, 5, 42, 0).assignment, make_folds(50, 5, 43, 0).assignment);
}

TEST(Folds, InvalidCounts) {
  EXPECT_THROW(make_folds(4, 5, 0, 0), ValidationError);
  EXPECT_THROW(make_folds(4, 1, 0, 0), ValidationError);
}

// ---------------------------------------------------------------- level 0

TEST(Level0, FoldMeanLearnerGivesExactTrainingMeans) {
  const Index n = 23;
  CovariateMatrix X{Matrix::Zero(n, 1), {{"c", 0, CovariateKind::static_field}}};
  Vector y(n);
  for (Index i = 0; i < n; ++i) y[i] = static_cast<double>((i * 7) % 11) - 3.0;  // integers: sums are exact
  const auto plan = make_folds(n, 4, 5, 0);
  const auto out = run_level0(X, y, {mean_learner()}, plan);
  for (Index i = 0; i < n; ++i) {
    double s = 0;
    int c = 0;
    for (Index k = 0; k < n; ++k)
      if (plan.assignment[static_cast<std::size_t>(k)] != plan.assignment[static_cast<std::size_t>(i)]) s += y[k], ++c;
    EXPECT_EQ(out.H(i, 0), s / c) << "row " << i;
    EXPECT_EQ(out.P(i, 0), y.sum() / static_cast<double>(n));
  }
}

TEST(Level0, PerturbingARowNeverReachesItsOwnPrediction) {
  const auto p = small_problem(40, 3);
  const auto plan = make_folds(40, 5, 7, 0);
  const auto specs = quick_learners();
  const auto base = run_level0(p.X, p.y, specs, plan);
  for (Index i : {Index(0), Index(17), Index(39)}) {
    Vector y2 = p.y;
    y2[i] += 25.0;
    const auto moved = run_level0(p.X, y2, specs, plan);
    for (Index j = 0; j < 3; ++j) {
      EXPECT_EQ(moved.H(i, j), base.H(i, j));
      // rows in i's fold are predicted by the same model, so they stay put as well
      for (Index r : plan.test_rows(plan.assignment[static_cast<std::size_t>(i)])) EXPECT_EQ(moved.H(r, j), base.H(r, j));
    }
  }
}

TEST(Level0, InterpolatingLearnerShowsGeneralisationGap) {
  const auto p = small_problem(50, 4);
  const auto plan = make_folds(50, 5, 1, 0);
  const auto out = run_level0(p.X, p.y, {LearnerSpec::make(LearnerKind::gbt, {{"n_trees", 1}, {"shrinkage", 1}, {"max_depth", 64}, {"subsample", 1}, {"colsample", 1}, {"min_leaf", 1}})}, plan);
  EXPECT_LT((out.P.col(0) - p.y).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT((out.H.col(0) - p.y).squaredNorm(), 1e-3);
}

TEST(Level0, ColumnsFollowSpecOrder) {
  const auto p = small_problem(30, 5);
  auto specs = quick_learners();
  specs.push_back(LearnerSpec::make(LearnerKind::enet, {{"lambda2", 1}}, 4));
  const auto out = run_level0(p.X, p.y, specs, make_folds(30, 3, 0, 0));
  EXPECT_EQ(out.P.cols(), 4);
  EXPECT_EQ(out.H.cols(), 4);
  EXPECT_EQ(out.labels, (std::vector<std::string>{"gbt", "enet", "mars", "enet_2"}));
}

TEST(Level0, ErrorsCarryLearnerContext) {
  CovariateMatrix X{Matrix::Zero(6, 1), {{"c", 0, CovariateKind::static_field}}};
  Vector y = Vector::Zero(6);
  y[2] = std::numeric_limits<double>::quiet_NaN();
  try {
    run_level0(X, y, {LearnerSpec::make(LearnerKind::rf, {{"n_trees", 2}})}, make_folds(6, 2, 0, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
    EXPECT_NE(std::string(e.what()).find("learner rf"), std::string::npos) << e.what();
  }
}

// ---------------------------------------------------------------- design 1

TEST(Design1, CwmSingleLearnerReturnsItsPredictions) {
  const auto p = small_problem(40, 6);
  const auto plan = make_folds(40, 5, 2, 0);
  const auto s = fit_design1(p.X, p.y, p.pts, {LearnerSpec::make(LearnerKind::mars)}, Level1Kind::cwm, plan);
  EXPECT_EQ(s.predict(p.X, p.pts).mean, s.P.col(0));
}

TEST(Design1, ZeroCovarianceGpMatchesCwm) {
  const auto p = small_problem(60, 7);
  const auto plan = make_folds(60, 5, 3, 0);
  GpFitConfig zero;
  zero.zero_covariance = true;
  const auto gp = fit_design1(p.X, p.y, p.pts, quick_learners(), Level1Kind::gp, plan, zero);
  const auto cwm = fit_design1(p.X, p.y, p.pts, quick_learners(), Level1Kind::cwm, plan);
  EXPECT_LT((gp.gps.front().params.beta - cwm.cwm->beta).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((gp.predict(p.X, p.pts).mean - cwm.predict(p.X, p.pts).mean).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Design1, SwappingLearnersPermutesColumnsOnly) {
  const auto p = small_problem(50, 8);
  const auto plan = make_folds(50, 5, 4, 0);
  auto specs = quick_learners();
  auto swapped = specs;
  std::swap(swapped[0], swapped[2]);
  for (auto kind : {Level1Kind::cwm, Level1Kind::gp}) {
    const auto a = fit_design1(p.X, p.y, p.pts, specs, kind, plan, quick_gp());
    const auto b = fit_design1(p.X, p.y, p.pts, swapped, kind, plan, quick_gp());
    EXPECT_EQ(a.P.col(0), b.P.col(2));
    EXPECT_EQ(a.H.col(2), b.H.col(0));
    EXPECT_LT((a.predict(p.X, p.pts).mean - b.predict(p.X, p.pts).mean).cwiseAbs().maxCoeff(), 1e-6)
        << to_string(kind);
  }
}

TEST(Design1, CwmInSampleNoWorseThanBestLearner) {
  const auto p = small_problem(60, 9);
  const auto s = fit_design1(p.X, p.y, p.pts, quick_learners(), Level1Kind::cwm, make_folds(60, 5, 1, 0));
  const double stack = (p.y - s.H * s.cwm->beta).squaredNorm();
  for (Index j = 0; j < s.H.cols(); ++j) EXPECT_LE(stack, (p.y - s.H.col(j)).squaredNorm() + 1e-10);
}

// ---------------------------------------------------------------- designs 2 and 3

TEST(Design2, SingleLearnerMatchesDesign1Gp) {
  const auto p = small_problem(40, 10);
  const auto plan = make_folds(40, 5, 5, 0);
  const std::vector<LearnerSpec> one{LearnerSpec::make(LearnerKind::enet)};
  const auto d1 = fit_design1(p.X, p.y, p.pts, one, Level1Kind::gp, plan, quick_gp());
  const auto d2 = fit_design2(p.X, p.y, p.pts, one, plan, quick_gp());
  EXPECT_EQ(d2.level2->beta, Vector::Ones(1));
  const auto a = d1.predict(p.X, p.pts), b = d2.predict(p.X, p.pts);
  EXPECT_LT((a.mean - b.mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((a.variance - b.variance).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Design2, IdenticalLearnersCollapse) {
  const auto p = small_problem(40, 11);
  const auto plan = make_folds(40, 4, 6, 0);
  const auto spec = LearnerSpec::make(LearnerKind::mars, {}, 3);
  const auto single = fit_design2(p.X, p.y, p.pts, {spec}, plan, quick_gp());
  const auto twin = fit_design2(p.X, p.y, p.pts, {spec, spec}, plan, quick_gp());
  EXPECT_EQ(twin.level1_oof.col(0), twin.level1_oof.col(1));
  EXPECT_LT((twin.predict(p.X, p.pts).mean - single.predict(p.X, p.pts).mean).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Design2, LevelTwoWeightsMatchGridSearch) {
  const auto p = small_problem(50, 12);
  const auto plan = make_folds(50, 5, 7, 0);
  const auto s = fit_design2(p.X, p.y, p.pts, {LearnerSpec::make(LearnerKind::enet), LearnerSpec::make(LearnerKind::mars)},
                             plan, quick_gp());
  double best = std::numeric_limits<double>::infinity(), arg = 0;
  for (int k = 0; k <= 10000; ++k) {
    const double b = k / 10000.0;
    const double obj = (p.y - b * s.level1_oof.col(0) - (1 - b) * s.level1_oof.col(1)).squaredNorm();
    if (obj < best) best = obj, arg = b;
  }
  EXPECT_NEAR(s.level2->beta[0], arg, 1e-4);
}

TEST(Design2, LevelOneOutOfFoldUsesFixedHyperparameters) {
  const auto p = small_problem(40, 13);
  const auto plan = make_folds(40, 4, 8, 0);
  const auto s = fit_design2(p.X, p.y, p.pts, {LearnerSpec::make(LearnerKind::enet)}, plan, quick_gp());
  for (int j = 0; j < plan.v; ++j) {
    const auto sub = s.gps[0].restrict_to(plan.train_rows(j));
    std::vector<SpaceTimePoint> tp;
    for (Index r : plan.test_rows(j)) tp.push_back(p.pts[static_cast<std::size_t>(r)]);
    const Vector pred = sub.predict(tp, select_rows(s.H, plan.test_rows(j))).mean;
    EXPECT_EQ(pred, select_rows(Vector(s.level1_oof.col(0)), plan.test_rows(j)));
  }
}

TEST(Design3, SingleVariantMatchesDesign1) {
  const auto p = small_problem(40, 14);
  const auto plan = make_folds(40, 5, 9, 0);
  const auto spec = LearnerSpec::make(LearnerKind::mars);
  const auto d1 = fit_design1(p.X, p.y, p.pts, {spec}, Level1Kind::gp, plan, quick_gp());
  const auto d3 = fit_design3(p.X, p.y, p.pts, spec, {quick_gp()}, plan);
  EXPECT_LT((d1.predict(p.X, p.pts).mean - d3.predict(p.X, p.pts).mean).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Design3, IdenticalVariantsCollapse) {
  const auto p = small_problem(40, 15);
  const auto plan = make_folds(40, 5, 10, 0);
  const auto spec = LearnerSpec::make(LearnerKind::enet);
  const auto one = fit_design3(p.X, p.y, p.pts, spec, {quick_gp()}, plan);
  const auto two = fit_design3(p.X, p.y, p.pts, spec, {quick_gp(), quick_gp()}, plan);
  EXPECT_LT((one.predict(p.X, p.pts).mean - two.predict(p.X, p.pts).mean).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Design3, LongAndShortRangeCombinationNoWorseThanEither) {
  const auto p = small_problem(70, 16, Regime::covariance_heavy);
  const auto plan = make_folds(70, 5, 11, 0);
  GpFitConfig long_range = quick_gp(), short_range = quick_gp();
  long_range.fixed_range = 1.0;
  short_range.fixed_range = 0.15;
  const auto s = fit_design3(p.X, p.y, p.pts, LearnerSpec::make(LearnerKind::enet), {long_range, short_range}, plan);
  const double combined = (p.y - s.level1_oof * s.level2->beta).squaredNorm() / 70.0;
  for (Index k = 0; k < 2; ++k) EXPECT_LE(combined, (p.y - s.level1_oof.col(k)).squaredNorm() / 70.0 + 1e-10);
  EXPECT_NEAR(s.gps[0].params.range(), 1.0, 1e-12);
  EXPECT_NEAR(s.gps[1].params.range(), 0.15, 1e-12);
}

TEST(Design3, NoVariantsRejected) {
  const auto p = small_problem(20, 17);
  EXPECT_THROW(fit_design3(p.X, p.y, p.pts, mean_learner(), {}, make_folds(20, 2, 0, 0)), ConfigError);
}

// ---------------------------------------------------------------- serialisation

TEST(StackSerialisation, RoundTripAllDesigns) {
  const auto p = small_problem(40, 18);
  const auto plan = make_folds(40, 4, 12, 0);
  std::vector<StackModel> models;
  models.push_back(fit_design1(p.X, p.y, p.pts, quick_learners(), Level1Kind::cwm, plan));
  models.push_back(fit_design1(p.X, p.y, p.pts, quick_learners(), Level1Kind::gp, plan, quick_gp()));
  models.push_back(fit_design2(p.X, p.y, p.pts, {LearnerSpec::make(LearnerKind::enet)}, plan, quick_gp()));
  models.push_back(fit_design3(p.X, p.y, p.pts, LearnerSpec::make(LearnerKind::enet), {quick_gp()}, plan));
  const auto q = small_problem(15, 19);
  for (const auto& m : models) {
    const auto back = stack_from_json(nlohmann::json::parse(stack_to_json(m).dump()));
    const auto a = m.predict(q.X, q.pts), b = back.predict(q.X, q.pts);
    EXPECT_EQ(a.mean, b.mean) << "design " << m.design;
    EXPECT_EQ(a.variance, b.variance) << "design " << m.design;
  }
}

TEST(StackSerialisation, NewerFormatRejected) {
  const auto p = small_problem(20, 20);
  auto j = stack_to_json(fit_design1(p.X, p.y, p.pts, {mean_learner()}, Level1Kind::cwm, make_folds(20, 2, 0, 0)));
  j["format_version"] = kModelFormatVersion + 1;
  EXPECT_THROW(stack_from_json(j), SchemaError);
}

// ---------------------------------------------------------------- repeated CV

TEST(RepeatCv, FiveRepeatsAverageSingleRepeats) {
  const auto p = small_problem(40, 21);
  CvConfig cfg;
  cfg.v = 4;
  cfg.repeats = 5;
  cfg.seed = 77;
  cfg.gp = quick_gp();
  const std::vector<LearnerSpec> specs{LearnerSpec::make(LearnerKind::enet), LearnerSpec::make(LearnerKind::mars)};
  const auto all = repeat_cv_evaluate(p.X, p.y, p.pts, specs, cfg);
  std::map<std::string, std::vector<MetricRow>> singles;
  for (int r = 0; r < 5; ++r) {
    CvConfig one = cfg;
    one.repeats = 1;
    one.first_repeat = r;
    for (const auto& row : repeat_cv_evaluate(p.X, p.y, p.pts, specs, one).rows) singles[row.method].push_back(row);
  }
  for (const auto& s : all.summary) {
    const auto& rows = singles.at(s.method);
    ASSERT_EQ(rows.size(), 5u);
    double mse_sum = 0, mae_sum = 0;
    for (const auto& r : rows) mse_sum += r.mse, mae_sum += r.mae;
    EXPECT_EQ(s.mse, mse_sum / 5) << s.method;
    EXPECT_EQ(s.mae, mae_sum / 5) << s.method;
  }
  EXPECT_EQ(all.rows.size(), 5u * all.summary.size());
}

TEST(RepeatCv, OracleLearnerSetsTheNoiseFloor) {
  // y = signal + noise with the signal supplied as a covariate; a linear learner on it is an oracle.
  const Index n = 120;
  Rng rng(5);
  Matrix V(n, 2);
  Vector y(n);
  std::vector<SpaceTimePoint> pts;
  const double noise_sd = 0.3;
  for (Index i = 0; i < n; ++i) {
    V(i, 0) = 2 * uniform01(rng) - 1;
    V(i, 1) = 2 * uniform01(rng) - 1;
    y[i] = 1.5 * V(i, 0) + noise_sd * detail::std_normal(rng);
    pts.push_back({uniform01(rng) * 3, uniform01(rng) * 3, 0});
  }
  CovariateMatrix X{V, {{"signal", 0, CovariateKind::static_field}, {"junk", 0, CovariateKind::static_field}}};
  CvConfig cfg;
  cfg.v = 5;
  cfg.repeats = 2;
  cfg.seed = 3;
  cfg.plain_gp = false;
  cfg.gp = quick_gp();
  const auto res = repeat_cv_evaluate(X, y, pts, {LearnerSpec::make(LearnerKind::linear_mean), LearnerSpec::make(LearnerKind::gbt, {{"n_trees", 20}})}, cfg);
  auto summary = [&](const std::string& m) {
    return *std::find_if(res.summary.begin(), res.summary.end(), [&](const auto& r) { return r.method == m; });
  };
  EXPECT_LT(summary("linear-mean").mse, 1.5 * noise_sd * noise_sd);
  EXPECT_LE(summary("gp-stack").mse, summary("linear-mean").mse * 1.05);
}

TEST(RepeatCv, ConstantPredictionsFlaggedDegenerate) {
  // y sums to zero inside every outer fold, so every training mean is exactly 0
  const Index n = 20;
  const auto plan = make_folds(n, 5, 9, 0);
  Vector y(n);
  for (int f = 0; f < 5; ++f) {
    const auto rows = plan.test_rows(f);
    const double vals[4] = {1.0 + f, -1.0 - f, 0.5, -0.5};
    for (std::size_t k = 0; k < rows.size(); ++k) y[rows[k]] = vals[k];
  }
  CovariateMatrix X{Matrix::Zero(n, 1), {{"c", 0, CovariateKind::static_field}}};
  std::vector<SpaceTimePoint> pts(static_cast<std::size_t>(n));
  CvConfig cfg;
  cfg.v = 5;
  cfg.repeats = 1;
  cfg.seed = 9;
  cfg.cwm_stack = cfg.gp_stack = cfg.plain_gp = false;
  const auto res = repeat_cv_evaluate(X, y, pts, {mean_learner()}, cfg);
  ASSERT_EQ(res.summary.size(), 1u);
  EXPECT_TRUE(res.summary[0].degenerate);
  EXPECT_EQ(res.summary[0].correlation, 0.0);
  std::ostringstream csv;
  write_metrics_csv(csv, res.summary);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "method,region,repeat,mse,mae,correlation,degenerate");
  EXPECT_NE(csv.str().find(",mean,"), std::string::npos);
}

TEST(RepeatCv, Deterministic) {
  const auto p = small_problem(40, 22);
  CvConfig cfg;
  cfg.v = 4;
  cfg.repeats = 1;
  cfg.seed = 5;
  cfg.gp = quick_gp();
  const auto a = repeat_cv_evaluate(p.X, p.y, p.pts, quick_learners(), cfg);
  const auto b = repeat_cv_evaluate(p.X, p.y, p.pts, quick_learners(), cfg);
  for (const auto& [m, pred] : a.predictions) EXPECT_EQ(pred, b.predictions.at(m)) << m;
}
