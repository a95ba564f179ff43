#pragma once

// Uniform fit/predict contract over the level-0 generalisers, plus model-file serialisation.

#include "gpstack/dataset.hpp"
#include "gpstack/learners/enet.hpp"
#include "gpstack/learners/gam.hpp"
#include "gpstack/learners/gbt.hpp"
#include "gpstack/learners/mars.hpp"
#include "gpstack/learners/rf.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <string>
#include <variant>

namespace gpstack {

enum class LearnerKind { gbt, rf, enet, gam, mars, linear_mean };

inline std::string to_string(LearnerKind k) {
  switch (k) {
    case LearnerKind::gbt: return "gbt";
    case LearnerKind::rf: return "rf";
    case LearnerKind::enet: return "enet";
    case LearnerKind::gam: return "gam";
    case LearnerKind::mars: return "mars";
    case LearnerKind::linear_mean: return "linear-mean";
  }
  return "gbt";
}

inline LearnerKind learner_kind_from_string(const std::string& s) {
  for (auto k : {LearnerKind::gbt, LearnerKind::rf, LearnerKind::enet, LearnerKind::gam, LearnerKind::mars,
                 LearnerKind::linear_mean})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown learner kind '" + s + "'");
}

namespace detail {

struct ParamRule {
  const char* name;
  double fallback;
  double lo;
  double hi;
  bool lo_open;
  bool integer;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline const std::vector<ParamRule>& param_rules(LearnerKind k) {
  static const std::map<LearnerKind, std::vector<ParamRule>> rules{
      {LearnerKind::gbt,
       {{"n_trees", 100, 0, 100000, false, true},
        {"shrinkage", 0.1, 0, 1, true, false},
        {"max_depth", 3, 1, 64, false, true},
        {"subsample", 0.8, 0, 1, true, false},
        {"colsample", 0.8, 0, 1, true, false},
        {"min_leaf", 5, 1, 1e9, false, true}}},
      {LearnerKind::rf,
       {{"n_trees", 200, 1, 100000, false, true},
        {"features_per_split", 0, 0, 1e9, false, true},
        {"min_leaf", 5, 1, 1e9, false, true},
        {"max_depth", 32, 1, 64, false, true},
        {"bootstrap", 1, 0, 1, false, true}}},
      {LearnerKind::enet,
       {{"lambda1", 0, 0, kInf, false, false},
        {"lambda2", 0, 0, kInf, false, false},
        {"path_length", 0, 0, 1000, false, true},
        {"alpha", 0.5, 0, 1, false, false},
        {"cv_folds", 5, 2, 1000, false, true},
        {"tolerance", 1e-9, 0, 1, true, false},
        {"max_sweeps", 10000, 1, 1e8, false, true}}},
      {LearnerKind::gam,
       {{"basis_size", 8, 4, 60, false, true},
        {"lambda", -1, -1, kInf, false, false},
        {"max_sweeps", 100, 1, 100000, false, true},
        {"tolerance", 1e-8, 0, 1, true, false}}},
      {LearnerKind::mars,
       {{"max_terms", 21, 1, 1000, false, true},
        {"max_degree", 1, 1, 10, false, true},
        {"penalty", 3, 0, kInf, false, false},
        {"max_knots", 30, 0, 1e9, false, true}}},
      {LearnerKind::linear_mean, {}},
  };
  return rules.at(k);
}

}  // namespace detail

/// Learner kind, validated hyperparameters (defaults filled in) and seed.
struct LearnerSpec {
  LearnerKind kind = LearnerKind::gbt;
  std::map<std::string, double> params;
  std::uint64_t seed = 0;

  /// Validates `overrides` against the kind's documented keys and ranges.
  static LearnerSpec make(LearnerKind kind, const std::map<std::string, double>& overrides = {},
                          std::uint64_t seed = 0) {
    LearnerSpec s{kind, {}, seed};
    const auto& rules = detail::param_rules(kind);
    for (const auto& [key, value] : overrides) {
      const auto it = std::find_if(rules.begin(), rules.end(), [&](const auto& r) { return key == r.name; });
      if (it == rules.end()) throw ValidationError(to_string(kind) + ": unknown hyperparameter '" + key + "'");
    }
    for (const auto& r : rules) {
      const auto it = overrides.find(r.name);
      const double v = it == overrides.end() ? r.fallback : it->second;
      const bool below = r.lo_open ? !(v > r.lo) : !(v >= r.lo);
      if (below || !(v <= r.hi) || (r.integer && v != std::floor(v)))
        throw ValidationError(to_string(kind) + ": hyperparameter '" + r.name + "' = " + format_real(v) +
                              " outside its legal range");
      s.params[r.name] = v;
    }
    return s;
  }

  double get(const std::string& key) const { return params.at(key); }
  int get_int(const std::string& key) const { return static_cast<int>(params.at(key)); }
  std::string name() const { return to_string(kind); }
};

inline GbtParams gbt_params(const LearnerSpec& s) {
  return {s.get_int("n_trees"), s.get("shrinkage"), s.get_int("max_depth"),
          s.get("subsample"), s.get("colsample"), s.get_int("min_leaf")};
}
inline RfParams rf_params(const LearnerSpec& s) {
  return {s.get_int("n_trees"), s.get_int("features_per_split"), s.get_int("min_leaf"), s.get_int("max_depth"),
          s.get_int("bootstrap") != 0};
}
inline EnetParams enet_params(const LearnerSpec& s) {
  return {s.get("lambda1"), s.get("lambda2"), s.get_int("path_length"), s.get("alpha"),
          s.get_int("cv_folds"), s.get("tolerance"), s.get_int("max_sweeps")};
}
inline GamParams gam_params(const LearnerSpec& s) {
  return {s.get_int("basis_size"), s.get("lambda"), s.get_int("max_sweeps"), s.get("tolerance")};
}
inline MarsParams mars_params(const LearnerSpec& s) {
  return {s.get_int("max_terms"), s.get_int("max_degree"), s.get("penalty"), s.get_int("max_knots")};
}

using LearnerState = std::variant<GbtModel, RfModel, EnetModel, GamModel, MarsModel, LinearModel>;

/// A fitted level-0 generaliser. Immutable after fit; predict requires the training column layout.
class LearnerModel {
public:
  LearnerModel(LearnerSpec spec, std::vector<std::string> columns, LearnerState state)
      : spec_(std::move(spec)), columns_(std::move(columns)), state_(std::move(state)) {}

  const LearnerSpec& spec() const { return spec_; }
  const std::vector<std::string>& columns() const { return columns_; }
  const LearnerState& state() const { return state_; }

  Vector predict(const CovariateMatrix& X) const {
    check_layout(X.labels());
    return predict(X.values);
  }

  /// Raw-matrix overload; the caller guarantees the column order.
  Vector predict(const Matrix& X) const {
    if (X.cols() != static_cast<Index>(columns_.size()))
      throw SchemaError("predict: expected " + std::to_string(columns_.size()) + " columns, got " +
                        std::to_string(X.cols()));
    return std::visit([&](const auto& m) -> Vector { return m.predict(X); }, state_);
  }

  void check_layout(const std::vector<std::string>& labels) const {
    if (labels == columns_) return;
    std::string missing, extra;
    for (const auto& c : columns_)
      if (std::find(labels.begin(), labels.end(), c) == labels.end()) missing += (missing.empty() ? "" : ",") + c;
    for (const auto& c : labels)
      if (std::find(columns_.begin(), columns_.end(), c) == columns_.end()) extra += (extra.empty() ? "" : ",") + c;
    throw SchemaError("predict: column layout differs from training (missing: [" + missing + "], extra: [" +
                      extra + "]" + (missing.empty() && extra.empty() ? ", order differs" : "") + ")");
  }

private:
  LearnerSpec spec_;
  std::vector<std::string> columns_;
  LearnerState state_;
};

inline LearnerState fit_state(const Matrix& X, const Vector& y, const LearnerSpec& spec) {
  if (X.rows() != y.size()) throw SchemaError("fit: X has " + std::to_string(X.rows()) + " rows, y has " +
                                              std::to_string(y.size()));
  switch (spec.kind) {
    case LearnerKind::gbt: return fit_gbt(X, y, gbt_params(spec), spec.seed);
    case LearnerKind::rf: return fit_rf(X, y, rf_params(spec), spec.seed);
    case LearnerKind::enet: return fit_enet(X, y, enet_params(spec), spec.seed);
    case LearnerKind::gam: return fit_gam(X, y, gam_params(spec));
    case LearnerKind::mars: return fit_mars(X, y, mars_params(spec));
    case LearnerKind::linear_mean: return fit_linear(X, y);
  }
  throw ConfigError("unknown learner kind");
}

inline LearnerModel fit_learner(const CovariateMatrix& X, const Vector& y, const LearnerSpec& spec) {
  return LearnerModel(spec, X.labels(), fit_state(X.values, y, spec));
}

inline LearnerModel fit_learner(const Matrix& X, const std::vector<std::string>& columns, const Vector& y,
                                const LearnerSpec& spec) {
  return LearnerModel(spec, columns, fit_state(X, y, spec));
}

// ---------------------------------------------------------------------------------------------
// serialisation

inline constexpr int kModelFormatVersion = 1;

namespace detail {

using nlohmann::json;

inline json vec_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
inline Vector vec_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

inline json tree_to_json(const RegressionTree& t) {
  json nodes = json::array();
  for (const auto& n : t.nodes()) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
  return nodes;
}

inline RegressionTree tree_from_json(const json& j) {
  std::vector<TreeNode> nodes;
  for (const auto& n : j)
    nodes.push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(), n.at(3).get<int>(),
                     n.at(4).get<double>()});
  return RegressionTree(std::move(nodes));
}

inline json linear_to_json(const LinearModel& m) { return {{"intercept", m.intercept}, {"coef", vec_to_json(m.coef)}}; }
inline LinearModel linear_from_json(const json& j) {
  return {j.at("intercept").get<double>(), vec_from_json(j.at("coef"))};
}

struct StateToJson {
  json operator()(const GbtModel& m) const {
    json trees = json::array();
    for (const auto& t : m.trees) trees.push_back(tree_to_json(t));
    return {{"base", m.base}, {"shrinkage", m.shrinkage}, {"trees", trees}};
  }
  json operator()(const RfModel& m) const {
    json trees = json::array();
    for (const auto& t : m.trees) trees.push_back(tree_to_json(t));
    return {{"trees", trees}};
  }
  json operator()(const EnetModel& m) const {
    return {{"linear", linear_to_json(m.linear)},
            {"standardizer_mean", vec_to_json(m.standardizer.mean)},
            {"standardizer_scale", vec_to_json(m.standardizer.scale)},
            {"beta_standardized", vec_to_json(m.beta_standardized)},
            {"lambda1", m.lambda1},
            {"lambda2", m.lambda2}};
  }
  json operator()(const GamModel& m) const {
    json terms = json::array();
    for (const auto& t : m.terms)
      terms.push_back({{"column", t.column},
                       {"knots", t.basis.knots},
                       {"degree", t.basis.degree},
                       {"lo", t.basis.lo},
                       {"hi", t.basis.hi},
                       {"coef", vec_to_json(t.coef)},
                       {"lambda", t.lambda}});
    return {{"intercept", m.intercept}, {"terms", terms}, {"warnings", m.warnings}};
  }
  json operator()(const MarsModel& m) const {
    json basis = json::array();
    for (const auto& b : m.basis) {
      json factors = json::array();
      for (const auto& f : b.factors) factors.push_back({f.feature, f.knot, f.direction});
      basis.push_back(factors);
    }
    return {{"basis", basis}, {"coef", vec_to_json(m.coef)}};
  }
  json operator()(const LinearModel& m) const { return linear_to_json(m); }
};

inline LearnerState state_from_json(LearnerKind kind, const json& j) {
  switch (kind) {
    case LearnerKind::gbt: {
      GbtModel m;
      m.base = j.at("base").get<double>();
      m.shrinkage = j.at("shrinkage").get<double>();
      for (const auto& t : j.at("trees")) m.trees.push_back(tree_from_json(t));
      return m;
    }
    case LearnerKind::rf: {
      RfModel m;
      for (const auto& t : j.at("trees")) m.trees.push_back(tree_from_json(t));
      return m;
    }
    case LearnerKind::enet: {
      EnetModel m;
      m.linear = linear_from_json(j.at("linear"));
      m.standardizer.mean = vec_from_json(j.at("standardizer_mean"));
      m.standardizer.scale = vec_from_json(j.at("standardizer_scale"));
      m.beta_standardized = vec_from_json(j.at("beta_standardized"));
      m.lambda1 = j.at("lambda1").get<double>();
      m.lambda2 = j.at("lambda2").get<double>();
      return m;
    }
    case LearnerKind::gam: {
      GamModel m;
      m.intercept = j.at("intercept").get<double>();
      for (const auto& t : j.at("terms")) {
        GamTerm term;
        term.column = t.at("column").get<int>();
        term.basis.knots = t.at("knots").get<std::vector<double>>();
        term.basis.degree = t.at("degree").get<int>();
        term.basis.lo = t.at("lo").get<double>();
        term.basis.hi = t.at("hi").get<double>();
        term.coef = vec_from_json(t.at("coef"));
        term.lambda = t.at("lambda").get<double>();
        m.terms.push_back(std::move(term));
      }
      m.warnings = j.at("warnings").get<std::vector<std::string>>();
      return m;
    }
    case LearnerKind::mars: {
      MarsModel m;
      for (const auto& b : j.at("basis")) {
        MarsBasis basis;
        for (const auto& f : b) basis.factors.push_back({f.at(0).get<int>(), f.at(1).get<double>(), f.at(2).get<int>()});
        m.basis.push_back(std::move(basis));
      }
      m.coef = vec_from_json(j.at("coef"));
      return m;
    }
    case LearnerKind::linear_mean: return linear_from_json(j);
  }
  throw ConfigError("unknown learner kind");
}

}  // namespace detail

inline nlohmann::json spec_to_json(const LearnerSpec& s) {
  return {{"kind", to_string(s.kind)}, {"params", s.params}, {"seed", s.seed}};
}

/// Accepts {"kind": ..., "params": {...}, "seed": n}; params may be partial (defaults fill the rest).
inline LearnerSpec spec_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, {"kind", "params", "seed"}, "learner spec");
  try {
    const auto kind = learner_kind_from_string(j.at("kind").get<std::string>());
    const auto params = j.contains("params") ? j.at("params").get<std::map<std::string, double>>()
                                             : std::map<std::string, double>{};
    const auto seed = j.contains("seed") ? j.at("seed").get<std::uint64_t>() : std::uint64_t{0};
    return LearnerSpec::make(kind, params, seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("learner spec: ") + e.what());
  }
}

inline nlohmann::json learner_to_json(const LearnerModel& m) {
  return {{"spec", spec_to_json(m.spec())},
          {"columns", m.columns()},
          {"state", std::visit(detail::StateToJson{}, m.state())}};
}

inline LearnerModel learner_from_json(const nlohmann::json& j) {
  auto spec = spec_from_json(j.at("spec"));
  auto columns = j.at("columns").get<std::vector<std::string>>();
  auto state = detail::state_from_json(spec.kind, j.at("state"));
  return LearnerModel(std::move(spec), std::move(columns), std::move(state));
}

/// Rejects model files written by a newer format.
inline void check_format_version(const nlohmann::json& j) {
  if (!j.contains("format_version")) throw SchemaError("model file: missing format_version");
  const int v = j.at("format_version").get<int>();
  if (v > kModelFormatVersion)
    throw SchemaError("model file: format_version " + std::to_string(v) + " is newer than supported version " +
                      std::to_string(kModelFormatVersion));
}

}  // namespace gpstack
