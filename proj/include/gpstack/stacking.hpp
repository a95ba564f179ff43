#pragma once

// Stacked generalisation: out-of-fold level-0 predictions, level-1 fitting, designs 1-3 and repeated CV.

#include "gpstack/cwm.hpp"
#include "gpstack/dataset.hpp"
#include "gpstack/gp/fit.hpp"
#include "gpstack/learners/learner.hpp"
#include "gpstack/metrics.hpp"

#include <json.hpp>

#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace gpstack {

struct FoldPlan {
  int v = 0;
  std::vector<int> assignment;
  std::uint64_t seed = 0;
  int repeat_index = 0;

  Index size() const { return static_cast<Index>(assignment.size()); }

  std::vector<Index> test_rows(int fold) const {
    std::vector<Index> rows;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] == fold) rows.push_back(static_cast<Index>(i));
    return rows;
  }

  std::vector<Index> train_rows(int fold) const {
    std::vector<Index> rows;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] != fold) rows.push_back(static_cast<Index>(i));
    return rows;
  }
};

/// Seeded shuffle, then row k of the permutation goes to fold k mod v.
inline FoldPlan make_folds(Index n, int v, std::uint64_t seed, int repeat_index) {
  if (v < 2) throw ValidationError("make_folds: need v >= 2, got " + std::to_string(v));
  if (v > n) throw ValidationError("make_folds: v = " + std::to_string(v) + " exceeds n = " + std::to_string(n));
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(v),
                      static_cast<std::uint64_t>(repeat_index)));
  shuffle_in_place(perm, rng);
  FoldPlan plan{v, std::vector<int>(static_cast<std::size_t>(n)), seed, repeat_index};
  for (std::size_t k = 0; k < perm.size(); ++k) plan.assignment[static_cast<std::size_t>(perm[k])] = static_cast<int>(k % static_cast<std::size_t>(v));
  return plan;
}

/// Column names for level-0 outputs: learner names, with a numeric suffix on repeats.
inline std::vector<std::string> learner_labels(const std::vector<LearnerSpec>& specs) {
  std::vector<std::string> out;
  std::map<std::string, int> seen;
  for (const auto& s : specs) {
    const int k = ++seen[s.name()];
    out.push_back(k == 1 ? s.name() : s.name() + "_" + std::to_string(k));
  }
  return out;
}

/// P (full-data fits) and H (out-of-fold) level-0 prediction matrices.
struct Level0Output {
  Matrix P;
  Matrix H;
  std::vector<LearnerModel> models;  // full-data fits, in spec order
  std::vector<std::string> labels;
};

/// Fold models use seed derive_seed(spec.seed, fold + 1); the full fit uses spec.seed.
inline Level0Output run_level0(const CovariateMatrix& X, const Vector& y, const std::vector<LearnerSpec>& specs,
                               const FoldPlan& plan) {
  if (specs.empty()) throw ConfigError("run_level0: no learners given");
  const Index n = y.size();
  if (X.values.rows() != n || plan.size() != n) throw SchemaError("run_level0: X, y and fold plan disagree in length");
  const auto L = static_cast<Index>(specs.size());
  Level0Output out;
  out.labels = learner_labels(specs);
  out.P.resize(n, L);
  out.H.resize(n, L);
  const auto labels = X.labels();
  for (Index i = 0; i < L; ++i) {
    const auto& spec = specs[static_cast<std::size_t>(i)];
    try {
      out.models.push_back(fit_learner(X.values, labels, y, spec));
      out.P.col(i) = out.models.back().predict(X.values);
      for (int j = 0; j < plan.v; ++j) {
        const auto train = plan.train_rows(j), test = plan.test_rows(j);
        LearnerSpec fold_spec = spec;
        fold_spec.seed = derive_seed(spec.seed, static_cast<std::uint64_t>(j) + 1);
        const auto model = fit_learner(select_rows(X.values, train), labels, select_rows(y, train), fold_spec);
        const Vector pred = model.predict(select_rows(X.values, test));
        for (std::size_t k = 0; k < test.size(); ++k) out.H(test[k], i) = pred[static_cast<Index>(k)];
      }
    } catch (Error& e) {
      throw Error(e.kind(), "learner " + out.labels[static_cast<std::size_t>(i)] + ": " + e.what());
    }
  }
  return out;
}

enum class Level1Kind { cwm, gp };

inline std::string to_string(Level1Kind k) { return k == Level1Kind::cwm ? "cwm" : "gp"; }
inline Level1Kind level1_kind_from_string(const std::string& s) {
  if (s == "cwm") return Level1Kind::cwm;
  if (s == "gp") return Level1Kind::gp;
  throw ConfigError("unknown level-1 generaliser '" + s + "' (expected cwm or gp)");
}

/// A fitted stack (designs 1-3). Level-1 models are fitted on H and applied to level-0 full-fit predictions.
struct StackModel {
  int design = 1;
  Level1Kind level1 = Level1Kind::cwm;
  std::vector<std::string> labels;
  std::vector<LearnerModel> level0;
  Matrix P;
  Matrix H;
  std::optional<SimplexWeights> cwm;  // design 1 with CWM level-1
  std::vector<GpModel> gps;           // design 1: one; design 2: one per learner; design 3: one per variant
  std::optional<SimplexWeights> level2;
  Matrix level1_oof;                  // designs 2-3: leave-one-fold-out level-1 predictions fed to level 2

  /// Level-0 predictions at new covariate rows, one column per learner.
  Matrix level0_predict(const CovariateMatrix& X) const {
    Matrix out(X.values.rows(), static_cast<Index>(level0.size()));
    for (std::size_t i = 0; i < level0.size(); ++i) out.col(static_cast<Index>(i)) = level0[i].predict(X);
    return out;
  }

  /// Mean and variance of the latent field. Level-2 variances combine level-1 standard deviations as
  /// (sum beta_k sd_k)^2, an upper bound that ignores the cross-covariance between level-1 models.
  GpPosterior predict(const CovariateMatrix& X, const std::vector<SpaceTimePoint>& pts) const {
    const Matrix Pn = level0_predict(X);
    const Index m = Pn.rows();
    if (design == 1) {
      if (level1 == Level1Kind::cwm) return {cwm_predict(*cwm, Pn), Vector::Zero(m), std::nullopt};
      return gp_stacked_predict(gps.front(), pts, Pn);
    }
    Matrix G(m, static_cast<Index>(gps.size()));
    Vector sd_mix = Vector::Zero(m);
    for (std::size_t k = 0; k < gps.size(); ++k) {
      const Matrix col = design == 2 ? Matrix(Pn.col(static_cast<Index>(k))) : Matrix(Pn.col(0));
      const auto post = gp_stacked_predict(gps[k], pts, col);
      G.col(static_cast<Index>(k)) = post.mean;
      sd_mix += level2->beta[static_cast<Index>(k)] * post.variance.cwiseSqrt();
    }
    return {cwm_predict(*level2, G), sd_mix.array().square(), std::nullopt};
  }
};

namespace detail {

/// Leave-one-fold-out predictions of a fitted GP with its hyperparameters held fixed.
inline Vector gp_fold_predictions(const GpModel& gp, const FoldPlan& plan) {
  Vector out(gp.y.size());
  for (int j = 0; j < plan.v; ++j) {
    const auto train = plan.train_rows(j), test = plan.test_rows(j);
    const GpModel sub = gp.restrict_to(train);
    std::vector<SpaceTimePoint> pts;
    for (Index r : test) pts.push_back(gp.points[static_cast<std::size_t>(r)]);
    const Vector pred = sub.predict(pts, select_rows(gp.train_basis, test)).mean;
    for (std::size_t k = 0; k < test.size(); ++k) out[test[k]] = pred[static_cast<Index>(k)];
  }
  return out;
}

inline void check_locations(const std::vector<SpaceTimePoint>& pts, const Vector& y) {
  if (static_cast<Index>(pts.size()) != y.size()) throw SchemaError("stacking: locations and responses differ in length");
}

}  // namespace detail

/// Design 1: several level-0 learners, one level-1 generaliser fitted on (y, H).
inline StackModel fit_design1(const CovariateMatrix& X, const Vector& y, const std::vector<SpaceTimePoint>& pts,
                              const std::vector<LearnerSpec>& specs, Level1Kind level1, const FoldPlan& plan,
                              const GpFitConfig& gp_config = {}) {
  detail::check_locations(pts, y);
  auto l0 = run_level0(X, y, specs, plan);
  StackModel s;
  s.design = 1;
  s.level1 = level1;
  s.labels = std::move(l0.labels);
  s.level0 = std::move(l0.models);
  s.P = std::move(l0.P);
  s.H = std::move(l0.H);
  if (level1 == Level1Kind::cwm) s.cwm = fit_cwm(s.H, y);
  else s.gps.push_back(fit_gp(pts, y, s.H, MeanKind::stacked, s.labels, gp_config));
  return s;
}

/// Design 2: each learner gets its own GP level-1 (single-column stacked mean); a CWM combines them.
inline StackModel fit_design2(const CovariateMatrix& X, const Vector& y, const std::vector<SpaceTimePoint>& pts,
                              const std::vector<LearnerSpec>& specs, const FoldPlan& plan,
                              const GpFitConfig& gp_config = {}) {
  detail::check_locations(pts, y);
  auto l0 = run_level0(X, y, specs, plan);
  StackModel s;
  s.design = 2;
  s.level1 = Level1Kind::gp;
  s.labels = std::move(l0.labels);
  s.level0 = std::move(l0.models);
  s.P = std::move(l0.P);
  s.H = std::move(l0.H);
  s.level1_oof.resize(y.size(), s.H.cols());
  for (Index k = 0; k < s.H.cols(); ++k) {
    s.gps.push_back(fit_gp(pts, y, Matrix(s.H.col(k)), MeanKind::stacked, {s.labels[static_cast<std::size_t>(k)]},
                           gp_config));
    s.level1_oof.col(k) = detail::gp_fold_predictions(s.gps.back(), plan);
  }
  s.level2 = fit_cwm(s.level1_oof, y);
  return s;
}

/// Design 3: one learner feeding several GP level-1 variants (e.g. different range bounds); a CWM combines them.
inline StackModel fit_design3(const CovariateMatrix& X, const Vector& y, const std::vector<SpaceTimePoint>& pts,
                              const LearnerSpec& spec, const std::vector<GpFitConfig>& variants,
                              const FoldPlan& plan) {
  if (variants.empty()) throw ConfigError("fit_design3: need at least one GP variant");
  detail::check_locations(pts, y);
  auto l0 = run_level0(X, y, {spec}, plan);
  StackModel s;
  s.design = 3;
  s.level1 = Level1Kind::gp;
  s.labels = std::move(l0.labels);
  s.level0 = std::move(l0.models);
  s.P = std::move(l0.P);
  s.H = std::move(l0.H);
  s.level1_oof.resize(y.size(), static_cast<Index>(variants.size()));
  for (std::size_t k = 0; k < variants.size(); ++k) {
    s.gps.push_back(fit_gp(pts, y, s.H, MeanKind::stacked, s.labels, variants[k]));
    s.level1_oof.col(static_cast<Index>(k)) = detail::gp_fold_predictions(s.gps.back(), plan);
  }
  s.level2 = fit_cwm(s.level1_oof, y);
  return s;
}

// ---------------------------------------------------------------------------------------------
// repeated cross-validation

struct CvConfig {
  int v = 5;
  int repeats = 5;
  int first_repeat = 0;  // repeat indices run first_repeat .. first_repeat + repeats - 1
  std::uint64_t seed = 0;
  std::string region = "region";
  bool level0 = true;
  bool cwm_stack = true;
  bool gp_stack = true;
  bool plain_gp = true;
  GpFitConfig gp;  // shared by the GP level-1 and the plain GP
};

struct MetricRow {
  std::string method;
  std::string region;
  int repeat = 0;  // -1 in the summary
  double mse = 0.0;
  double mae = 0.0;
  double correlation = 0.0;
  bool degenerate = false;  // correlation undefined (constant predictions) in at least one repeat
};

struct CvResult {
  std::vector<MetricRow> rows;     // one per method x repeat
  std::vector<MetricRow> summary;  // per-method mean over repeats
  std::map<std::string, Matrix> predictions;  // method -> n x repeats held-out predictions
};

/// Nested CV. For each outer fold: level-0 learners are fitted on the training part (alone they give the
/// level-0 baselines); an inner v-fold run on the training part gives H for the level-1 fits; level-1 models are
/// then applied to the training-part level-0 fits' predictions at the held-out rows.
inline CvResult repeat_cv_evaluate(const CovariateMatrix& X, const Vector& y, const std::vector<SpaceTimePoint>& pts,
                                   const std::vector<LearnerSpec>& specs, const CvConfig& cfg) {
  if (cfg.repeats < 1) throw ConfigError("repeat_cv_evaluate: repeats must be >= 1");
  if (specs.empty() && (cfg.level0 || cfg.cwm_stack || cfg.gp_stack))
    throw ConfigError("repeat_cv_evaluate: no level-0 learners given");
  detail::check_locations(pts, y);
  const Index n = y.size();
  const auto labels = learner_labels(specs);
  std::vector<std::string> methods;
  if (cfg.level0) methods.insert(methods.end(), labels.begin(), labels.end());
  if (cfg.cwm_stack) methods.push_back("cwm-stack");
  if (cfg.gp_stack) methods.push_back("gp-stack");
  if (cfg.plain_gp) methods.push_back("plain-gp");
  if (methods.empty()) throw ConfigError("repeat_cv_evaluate: no methods selected");

  CvResult res;
  for (const auto& m : methods) res.predictions[m] = Matrix::Zero(n, cfg.repeats);
  const auto col_labels = X.labels();

  for (int r = 0; r < cfg.repeats; ++r) {
    const int repeat = cfg.first_repeat + r;
    const FoldPlan outer = make_folds(n, cfg.v, cfg.seed, repeat);
    for (int j = 0; j < cfg.v; ++j) {
      const auto train = outer.train_rows(j), test = outer.test_rows(j);
      const CovariateMatrix Xtr = X.subset(train);
      const Matrix Xte = select_rows(X.values, test);
      const Vector ytr = select_rows(y, train);
      std::vector<SpaceTimePoint> ptr, pte;
      for (Index i : train) ptr.push_back(pts[static_cast<std::size_t>(i)]);
      for (Index i : test) pte.push_back(pts[static_cast<std::size_t>(i)]);
      auto store = [&](const std::string& m, const Vector& pred) {
        for (std::size_t k = 0; k < test.size(); ++k) res.predictions[m](test[k], r) = pred[static_cast<Index>(k)];
      };

      if (!specs.empty() && (cfg.level0 || cfg.cwm_stack || cfg.gp_stack)) {
        std::vector<LearnerSpec> fold_specs = specs;
        for (auto& s : fold_specs)
          s.seed = derive_seed(s.seed, 1000 + static_cast<std::uint64_t>(repeat), static_cast<std::uint64_t>(j) + 1);
        const auto inner = make_folds(static_cast<Index>(train.size()), cfg.v,
                                      derive_seed(cfg.seed, static_cast<std::uint64_t>(repeat) + 1), j);
        const auto l0 = run_level0(Xtr, ytr, fold_specs, inner);
        Matrix Pte(static_cast<Index>(test.size()), static_cast<Index>(specs.size()));
        for (std::size_t i = 0; i < l0.models.size(); ++i) Pte.col(static_cast<Index>(i)) = l0.models[i].predict(Xte);
        if (cfg.level0)
          for (std::size_t i = 0; i < labels.size(); ++i) store(labels[i], Pte.col(static_cast<Index>(i)));
        if (cfg.cwm_stack) store("cwm-stack", cwm_predict(fit_cwm(l0.H, ytr), Pte));
        if (cfg.gp_stack) {
          const auto gp = fit_gp(ptr, ytr, l0.H, MeanKind::stacked, l0.labels, cfg.gp);
          store("gp-stack", gp_stacked_predict(gp, pte, Pte).mean);
        }
      }
      if (cfg.plain_gp) {
        const auto gp = fit_gp(ptr, ytr, Xtr.values, MeanKind::linear, col_labels, cfg.gp);
        store("plain-gp", gp.predict(pte, Xte).mean);
      }
    }
    for (const auto& m : methods) {
      const Vector pred = res.predictions[m].col(r);
      const auto c = pearson(pred, y);
      res.rows.push_back({m, cfg.region, repeat, mse(pred, y), mae(pred, y), c.value, c.degenerate});
    }
  }

  for (const auto& m : methods) {
    MetricRow s{m, cfg.region, -1, 0, 0, 0, false};
    for (const auto& row : res.rows)
      if (row.method == m) {
        s.mse += row.mse;
        s.mae += row.mae;
        s.correlation += row.correlation;
        s.degenerate = s.degenerate || row.degenerate;
      }
    s.mse /= cfg.repeats;
    s.mae /= cfg.repeats;
    s.correlation /= cfg.repeats;
    res.summary.push_back(s);
  }
  return res;
}

inline void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows) {
  out << "method,region,repeat,mse,mae,correlation,degenerate\n";
  for (const auto& r : rows)
    out << r.method << ',' << r.region << ',' << (r.repeat < 0 ? std::string("mean") : std::to_string(r.repeat)) << ','
        << format_real(r.mse) << ',' << format_real(r.mae) << ',' << format_real(r.correlation) << ','
        << (r.degenerate ? 1 : 0) << '\n';
}

// ---------------------------------------------------------------------------------------------
// serialisation

namespace detail {
inline nlohmann::json weights_to_json(const SimplexWeights& w) {
  return {{"beta", std::vector<double>(w.beta.data(), w.beta.data() + w.beta.size())},
          {"objective", w.objective},
          {"kkt_residual", w.kkt_residual},
          {"degenerate", w.degenerate}};
}
inline SimplexWeights weights_from_json(const nlohmann::json& j) {
  SimplexWeights w;
  const auto b = j.at("beta").get<std::vector<double>>();
  w.beta = Eigen::Map<const Vector>(b.data(), static_cast<Index>(b.size()));
  w.objective = j.at("objective").get<double>();
  w.kkt_residual = j.at("kkt_residual").get<double>();
  w.degenerate = j.at("degenerate").get<bool>();
  return w;
}
}  // namespace detail

/// Model file: level-0 learners, level-1 and level-2 parameters. P, H and fold predictions are not stored.
inline nlohmann::json stack_to_json(const StackModel& s) {
  nlohmann::json j{{"format_version", kModelFormatVersion},
                   {"design", s.design},
                   {"level1", to_string(s.level1)},
                   {"labels", s.labels}};
  j["level0"] = nlohmann::json::array();
  for (const auto& m : s.level0) j["level0"].push_back(learner_to_json(m));
  j["gps"] = nlohmann::json::array();
  for (const auto& g : s.gps) j["gps"].push_back(gp_to_json(g));
  if (s.cwm) j["cwm"] = detail::weights_to_json(*s.cwm);
  if (s.level2) j["level2"] = detail::weights_to_json(*s.level2);
  return j;
}

inline StackModel stack_from_json(const nlohmann::json& j) {
  check_format_version(j);
  StackModel s;
  try {
    s.design = j.at("design").get<int>();
    if (s.design < 1 || s.design > 3) throw SchemaError("model file: design must be 1, 2 or 3");
    s.level1 = level1_kind_from_string(j.at("level1").get<std::string>());
    s.labels = j.at("labels").get<std::vector<std::string>>();
    for (const auto& m : j.at("level0")) s.level0.push_back(learner_from_json(m));
    for (const auto& g : j.at("gps")) s.gps.push_back(gp_from_json(g));
    if (j.contains("cwm")) s.cwm = detail::weights_from_json(j.at("cwm"));
    if (j.contains("level2")) s.level2 = detail::weights_from_json(j.at("level2"));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("model file: ") + e.what());
  } catch (const ConfigError& e) {
    throw SchemaError(std::string("model file: ") + e.what());
  }
  const bool ok = s.design == 1 ? (s.level1 == Level1Kind::cwm ? s.cwm.has_value() : s.gps.size() == 1)
                                : (s.level2.has_value() && !s.gps.empty() &&
                                   s.level2->beta.size() == static_cast<Index>(s.gps.size()));
  if (!ok || s.level0.empty()) throw SchemaError("model file: level-1 section inconsistent with design");
  return s;
}

}  // namespace gpstack
