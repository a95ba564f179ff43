#pragma once

// Run configuration and the command implementations behind the gpstack executable.
//
// A run config is one JSON object. Sections a command does not use may be present; unknown keys anywhere are
// rejected. Relative paths resolve against the working directory.
//
//   seed        integer; --seed overrides (and is required for synth and cv)
//   output      output directory
//   data        {surveys, covariates (manifest), truth}
//   learners    [{kind, params, seed}]; defaults to gbt, rf, enet, gam, mars
//   stacking    {design 1|2|3, level1 cwm|gp, folds, repeats, first_repeat, region, methods, gp_variants}
//   gp          {max_evaluations, f_tolerance, x_tolerance, initial_step, restarts, fixed_range,
//                fixed_variance, fixed_sigma_e2, fixed_phi, range_min, range_max, zero_covariance}
//   synth       ScenarioConfig fields (regime, n_surveys, ...)
//   predict     {model, months, grid}
//   eval        {metrics: [paths]}

#include "gpstack/metrics.hpp"
#include "gpstack/stacking.hpp"
#include "gpstack/synth.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gpstack::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

/// Parses `text` as JSON when possible, otherwise keeps it as a string.
inline json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

/// Applies "a.b.c=value"; numeric components index into arrays. Missing objects are created.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq);
  json* node = &cfg;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("--set: empty path component in '" + path + "'");
    if (node->is_array()) {
      const auto idx = gpstack::detail::parse_integer(key);
      if (!idx || *idx < 0 || static_cast<std::size_t>(*idx) >= node->size())
        throw ConfigError("--set: '" + key + "' is not a valid index in '" + path + "'");
      node = &(*node)[static_cast<std::size_t>(*idx)];
    } else {
      if (node->is_null()) *node = json::object();
      if (!node->is_object()) throw ConfigError("--set: '" + path + "' descends into a non-object");
      node = &(*node)[key];
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = parse_value(assignment.substr(eq + 1));
}

namespace detail {

/// Typed access to one config object with unknown-key rejection.
class Section {
public:
  Section(const json& j, std::string where, std::initializer_list<const char*> allowed) : where_(std::move(where)) {
    if (j.is_null()) return;
    if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
    gpstack::detail::reject_unknown_keys(j, allowed, where_);
    j_ = j;
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  const json& raw(const char* key) const { return j_.at(key); }

  template <class T>
  std::optional<T> opt(const char* key) const {
    if (!has(key)) return std::nullopt;
    try {
      const json& v = j_.at(key);
      if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
      }
      return v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type");
    }
  }

  template <class T>
  T get(const char* key, T fallback) const {
    return opt<T>(key).value_or(fallback);
  }

private:
  json j_ = json::object();
  std::string where_;
};

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace detail

struct RunConfig {
  std::optional<std::uint64_t> seed;
  fs::path output = "out";
  fs::path surveys, covariates, truth;
  std::vector<LearnerSpec> learners;
  int design = 1;
  Level1Kind level1 = Level1Kind::gp;
  int folds = 5;
  int repeats = 5;
  int first_repeat = 0;
  std::string region = "region";
  std::vector<std::string> methods{"level0", "cwm-stack", "gp-stack", "plain-gp"};
  GpFitConfig gp;
  std::vector<GpFitConfig> gp_variants;
  ScenarioConfig synth;
  fs::path model;
  std::vector<int> months;
  std::optional<GridGeometry> grid;
  std::vector<fs::path> metrics;

  std::uint64_t require_seed(const char* command) const {
    if (!seed) throw ConfigError(std::string(command) + ": --seed is required");
    return *seed;
  }
};

inline GpFitConfig gp_config_from_json(const json& j, const std::string& where, const GpFitConfig& base = {}) {
  detail::Section s(j, where,
                    {"max_evaluations", "f_tolerance", "x_tolerance", "initial_step", "restarts", "fixed_range",
                     "fixed_variance", "fixed_sigma_e2", "fixed_phi", "range_min", "range_max", "zero_covariance"});
  GpFitConfig c = base;
  c.optimiser.max_evaluations = s.get<int>("max_evaluations", c.optimiser.max_evaluations);
  c.optimiser.f_tolerance = s.get<double>("f_tolerance", c.optimiser.f_tolerance);
  c.optimiser.x_tolerance = s.get<double>("x_tolerance", c.optimiser.x_tolerance);
  c.optimiser.initial_step = s.get<double>("initial_step", c.optimiser.initial_step);
  c.optimiser.restarts = s.get<int>("restarts", c.optimiser.restarts);
  if (auto v = s.opt<double>("fixed_range")) c.fixed_range = v;
  if (auto v = s.opt<double>("fixed_variance")) c.fixed_variance = v;
  if (auto v = s.opt<double>("fixed_sigma_e2")) c.fixed_sigma_e2 = v;
  if (auto v = s.opt<double>("fixed_phi")) c.fixed_phi = v;
  if (auto v = s.opt<double>("range_min")) c.range_min = v;
  if (auto v = s.opt<double>("range_max")) c.range_max = v;
  c.zero_covariance = s.get<bool>("zero_covariance", c.zero_covariance);
  if (c.optimiser.max_evaluations < 1 || c.optimiser.restarts < 0 || !(c.optimiser.initial_step > 0) ||
      !(c.optimiser.f_tolerance >= 0) || !(c.optimiser.x_tolerance >= 0))
    throw ConfigError(where + ": optimiser settings out of range");
  return c;
}

inline json gp_config_to_json(const GpFitConfig& c) {
  return {{"max_evaluations", c.optimiser.max_evaluations},
          {"f_tolerance", c.optimiser.f_tolerance},
          {"x_tolerance", c.optimiser.x_tolerance},
          {"initial_step", c.optimiser.initial_step},
          {"restarts", c.optimiser.restarts},
          {"fixed_range", detail::optional_json(c.fixed_range)},
          {"fixed_variance", detail::optional_json(c.fixed_variance)},
          {"fixed_sigma_e2", detail::optional_json(c.fixed_sigma_e2)},
          {"fixed_phi", detail::optional_json(c.fixed_phi)},
          {"range_min", detail::optional_json(c.range_min)},
          {"range_max", detail::optional_json(c.range_max)},
          {"zero_covariance", c.zero_covariance}};
}

inline ScenarioConfig scenario_from_json(const json& j) {
  detail::Section s(j, "synth",
                    {"n_surveys", "n_static", "n_dynamic", "nx", "ny", "lon0", "lat0", "cell", "months", "regime",
                     "covariate_share", "range", "phi", "signal_variance", "noise_sd", "intercept", "covariate_noise",
                     "g_form", "n_min", "n_max"});
  ScenarioConfig c;
  c.n_surveys = s.get<int>("n_surveys", c.n_surveys);
  c.n_static = s.get<int>("n_static", c.n_static);
  c.n_dynamic = s.get<int>("n_dynamic", c.n_dynamic);
  c.nx = s.get<int>("nx", c.nx);
  c.ny = s.get<int>("ny", c.ny);
  c.lon0 = s.get<double>("lon0", c.lon0);
  c.lat0 = s.get<double>("lat0", c.lat0);
  c.cell = s.get<double>("cell", c.cell);
  c.months = s.get<int>("months", c.months);
  if (auto r = s.opt<std::string>("regime")) c.regime = regime_from_string(*r);
  if (auto v = s.opt<double>("covariate_share")) c.covariate_share = v;
  c.range = s.get<double>("range", c.range);
  c.phi = s.get<double>("phi", c.phi);
  c.signal_variance = s.get<double>("signal_variance", c.signal_variance);
  c.noise_sd = s.get<double>("noise_sd", c.noise_sd);
  c.intercept = s.get<double>("intercept", c.intercept);
  c.covariate_noise = s.get<double>("covariate_noise", c.covariate_noise);
  if (auto g = s.opt<std::string>("g_form")) {
    if (*g == "mixed") c.g_form = GForm::mixed;
    else if (*g == "linear") c.g_form = GForm::linear;
    else throw ConfigError("synth.g_form: expected mixed or linear");
  }
  c.n_min = s.get<long>("n_min", c.n_min);
  c.n_max = s.get<long>("n_max", c.n_max);
  c.validate();
  return c;
}

inline json scenario_to_json(const ScenarioConfig& c) {
  return {{"n_surveys", c.n_surveys}, {"n_static", c.n_static}, {"n_dynamic", c.n_dynamic},
          {"nx", c.nx}, {"ny", c.ny}, {"lon0", c.lon0}, {"lat0", c.lat0}, {"cell", c.cell},
          {"months", c.months}, {"regime", to_string(c.regime)},
          {"covariate_share", detail::optional_json(c.covariate_share)}, {"range", c.range}, {"phi", c.phi},
          {"signal_variance", c.signal_variance}, {"noise_sd", c.noise_sd}, {"intercept", c.intercept},
          {"covariate_noise", c.covariate_noise}, {"g_form", c.g_form == GForm::mixed ? "mixed" : "linear"},
          {"n_min", c.n_min}, {"n_max", c.n_max}};
}

inline std::vector<LearnerSpec> default_learners() {
  std::vector<LearnerSpec> out;
  std::uint64_t k = 1;
  for (auto kind : {LearnerKind::gbt, LearnerKind::rf, LearnerKind::enet, LearnerKind::gam, LearnerKind::mars})
    out.push_back(LearnerSpec::make(kind, {}, k++));
  return out;
}

/// Validates the whole config up front; `seed_flag` (from --seed) wins over the file's seed.
inline RunConfig resolve_config(const json& raw, std::optional<std::uint64_t> seed_flag) {
  detail::Section top(raw, "config",
                      {"seed", "output", "data", "learners", "stacking", "gp", "synth", "predict", "eval"});
  RunConfig c;
  c.seed = seed_flag ? seed_flag : top.opt<std::uint64_t>("seed");
  if (auto o = top.opt<std::string>("output")) c.output = *o;

  const detail::Section data(top.has("data") ? top.raw("data") : json(), "data", {"surveys", "covariates", "truth"});
  c.surveys = data.get<std::string>("surveys", "");
  c.covariates = data.get<std::string>("covariates", "");
  c.truth = data.get<std::string>("truth", "");

  if (top.has("learners")) {
    const json& l = top.raw("learners");
    if (!l.is_array() || l.empty()) throw ConfigError("learners: expected a non-empty array");
    for (const auto& spec : l) {
      try {
        c.learners.push_back(spec_from_json(spec));
      } catch (const ValidationError& e) {
        throw ConfigError(std::string("learners: ") + e.what());
      }
    }
  } else {
    c.learners = default_learners();
  }

  c.gp = gp_config_from_json(top.has("gp") ? top.raw("gp") : json(), "gp");

  const detail::Section st(top.has("stacking") ? top.raw("stacking") : json(), "stacking",
                           {"design", "level1", "folds", "repeats", "first_repeat", "region", "methods", "gp_variants"});
  c.design = st.get<int>("design", c.design);
  if (c.design < 1 || c.design > 3) throw ConfigError("stacking.design: expected 1, 2 or 3");
  if (auto l = st.opt<std::string>("level1")) c.level1 = level1_kind_from_string(*l);
  c.folds = st.get<int>("folds", c.folds);
  c.repeats = st.get<int>("repeats", c.repeats);
  c.first_repeat = st.get<int>("first_repeat", c.first_repeat);
  if (c.folds < 2 || c.repeats < 1 || c.first_repeat < 0)
    throw ConfigError("stacking: need folds >= 2, repeats >= 1, first_repeat >= 0");
  c.region = st.get<std::string>("region", c.region);
  if (st.has("methods")) {
    try {
      c.methods = st.raw("methods").get<std::vector<std::string>>();
    } catch (const json::exception&) {
      throw ConfigError("stacking.methods: expected an array of strings");
    }
    for (const auto& m : c.methods)
      if (m != "level0" && m != "cwm-stack" && m != "gp-stack" && m != "plain-gp")
        throw ConfigError("stacking.methods: unknown method '" + m + "'");
  }
  if (st.has("gp_variants")) {
    const json& v = st.raw("gp_variants");
    if (!v.is_array() || v.empty()) throw ConfigError("stacking.gp_variants: expected a non-empty array");
    for (std::size_t k = 0; k < v.size(); ++k)
      c.gp_variants.push_back(gp_config_from_json(v[k], "stacking.gp_variants." + std::to_string(k), c.gp));
  }
  if (c.design == 3 && c.gp_variants.empty()) c.gp_variants.push_back(c.gp);
  if (c.design == 3 && c.learners.size() != 1) throw ConfigError("stacking.design 3 takes exactly one learner");

  c.synth = scenario_from_json(top.has("synth") ? top.raw("synth") : json());

  const detail::Section pr(top.has("predict") ? top.raw("predict") : json(), "predict", {"model", "months", "grid"});
  c.model = pr.get<std::string>("model", "");
  if (pr.has("months")) {
    try {
      c.months = pr.raw("months").get<std::vector<int>>();
    } catch (const json::exception&) {
      throw ConfigError("predict.months: expected an array of integers");
    }
  }
  if (pr.has("grid")) {
    c.grid = grid_from_json(pr.raw("grid"), "predict.grid");
    c.grid->validate();
  }

  const detail::Section ev(top.has("eval") ? top.raw("eval") : json(), "eval", {"metrics"});
  if (ev.has("metrics")) {
    try {
      for (const auto& p : ev.raw("metrics").get<std::vector<std::string>>()) c.metrics.emplace_back(p);
    } catch (const json::exception&) {
      throw ConfigError("eval.metrics: expected an array of paths");
    }
  }
  return c;
}

/// Fully expanded configuration, written next to every command's outputs.
inline json resolved_json(const RunConfig& c) {
  json learners = json::array();
  for (const auto& l : c.learners) learners.push_back(spec_to_json(l));
  json variants = json::array();
  for (const auto& v : c.gp_variants) variants.push_back(gp_config_to_json(v));
  json months = c.months;
  json metrics = json::array();
  for (const auto& m : c.metrics) metrics.push_back(m.string());
  return {{"seed", c.seed ? json(*c.seed) : json(nullptr)},
          {"output", c.output.string()},
          {"data", {{"surveys", c.surveys.string()}, {"covariates", c.covariates.string()}, {"truth", c.truth.string()}}},
          {"learners", learners},
          {"stacking",
           {{"design", c.design}, {"level1", to_string(c.level1)}, {"folds", c.folds}, {"repeats", c.repeats},
            {"first_repeat", c.first_repeat}, {"region", c.region}, {"methods", c.methods},
            {"gp_variants", variants.empty() ? json(nullptr) : variants}}},
          {"gp", gp_config_to_json(c.gp)},
          {"synth", scenario_to_json(c.synth)},
          {"predict", {{"model", c.model.string()}, {"months", months}, {"grid", c.grid ? grid_to_json(*c.grid) : json(nullptr)}}},
          {"eval", {{"metrics", metrics}}}};
}

inline json load_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
}

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

inline void write_resolved(const RunConfig& c, const std::string& command) {
  fs::create_directories(c.output);
  json j = resolved_json(c);
  j["command"] = command;
  write_text(c.output / "resolved_config.json", j.dump(2) + "\n");
}

struct LoadedData {
  std::vector<SurveyRecord> surveys;
  CovariateStack stack;
  CovariateMatrix X;
  Vector y;
  std::vector<SpaceTimePoint> pts;
};

inline LoadedData load_data(const RunConfig& c) {
  if (c.surveys.empty() || c.covariates.empty()) throw ConfigError("data.surveys and data.covariates are required");
  LoadedData d;
  d.surveys = load_surveys(c.surveys);
  if (d.surveys.empty()) throw ValidationError(c.surveys.string() + ": no survey rows");
  d.stack = load_covariate_stack(c.covariates);
  d.X = assemble_design(d.surveys, d.stack);
  d.y = responses(d.surveys);
  d.pts = survey_points(d.surveys);
  return d;
}

inline std::string weights_csv(const std::vector<std::string>& names, const Vector& beta) {
  std::string s = "component,weight\n";
  for (Index k = 0; k < beta.size(); ++k) s += names[static_cast<std::size_t>(k)] + "," + format_real(beta[k]) + "\n";
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------------------------
// commands

/// surveys.csv, covariates.json, grids/, truth.csv.
inline void cmd_synth(const RunConfig& c) {
  ScenarioConfig sc = c.synth;
  sc.seed = c.require_seed("synth");
  const auto data = generate(sc);
  save_synth(c.output, data);
  detail::write_resolved(c, "synth");
}

/// model.json (+ weights.csv for CWM level-1 or level-2 weights).
inline void cmd_fit(const RunConfig& c) {
  const auto d = detail::load_data(c);
  const auto plan = make_folds(d.y.size(), c.folds, c.seed.value_or(0), 0);
  StackModel s;
  if (c.design == 1) s = fit_design1(d.X, d.y, d.pts, c.learners, c.level1, plan, c.gp);
  else if (c.design == 2) s = fit_design2(d.X, d.y, d.pts, c.learners, plan, c.gp);
  else s = fit_design3(d.X, d.y, d.pts, c.learners.front(), c.gp_variants, plan);
  fs::create_directories(c.output);
  detail::write_text(c.output / "model.json", stack_to_json(s).dump(1) + "\n");
  if (s.cwm) detail::write_text(c.output / "weights.csv", detail::weights_csv(s.labels, s.cwm->beta));
  if (s.design == 1 && s.level1 == Level1Kind::gp)
    detail::write_text(c.output / "weights.csv", detail::weights_csv(s.labels, s.gps.front().params.beta));
  if (s.level2) {
    std::vector<std::string> names;
    for (std::size_t k = 0; k < s.gps.size(); ++k)
      names.push_back(s.design == 2 ? s.labels[k] : "variant_" + std::to_string(k));
    detail::write_text(c.output / "weights.csv", detail::weights_csv(names, s.level2->beta));
  }
  detail::write_resolved(c, "fit");
}

/// predictions.csv: lon,lat,t,mean,sd per grid cell and month (latent logit scale).
inline void cmd_predict(const RunConfig& c) {
  if (c.model.empty()) throw ConfigError("predict.model is required");
  if (c.months.empty()) throw ConfigError("predict.months is required");
  if (c.covariates.empty()) throw ConfigError("data.covariates is required");
  std::ifstream in(c.model);
  if (!in) throw ValidationError("cannot open model file " + c.model.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("model file: " + std::string(e.what()));
  }
  const StackModel s = stack_from_json(j);
  const CovariateStack stack = load_covariate_stack(c.covariates);
  if (stack.layers.empty()) throw ValidationError("covariate manifest has no layers");
  const GridGeometry g = c.grid.value_or(stack.layers.front().grid);
  std::string out = "lon,lat,t,mean,sd\n";
  for (int t : c.months) {
    const auto grid = PredictionGrid::build(g, t, stack);
    const auto pts = grid.points();
    const auto post = s.predict(grid.covariates, pts);
    for (std::size_t k = 0; k < pts.size(); ++k)
      out += format_real(pts[k].lon) + "," + format_real(pts[k].lat) + "," + std::to_string(t) + "," +
             format_real(post.mean[static_cast<Index>(k)]) + "," +
             format_real(std::sqrt(std::max(0.0, post.variance[static_cast<Index>(k)]))) + "\n";
  }
  fs::create_directories(c.output);
  detail::write_text(c.output / "predictions.csv", out);
  detail::write_resolved(c, "predict");
}

/// metrics.csv (method x repeat) and metrics_summary.csv (means over repeats).
inline void cmd_cv(const RunConfig& c) {
  const auto d = detail::load_data(c);
  CvConfig cv;
  cv.v = c.folds;
  cv.repeats = c.repeats;
  cv.first_repeat = c.first_repeat;
  cv.seed = c.require_seed("cv");
  cv.region = c.region;
  auto has = [&](const char* m) { return std::find(c.methods.begin(), c.methods.end(), m) != c.methods.end(); };
  cv.level0 = has("level0");
  cv.cwm_stack = has("cwm-stack");
  cv.gp_stack = has("gp-stack");
  cv.plain_gp = has("plain-gp");
  cv.gp = c.gp;
  const auto res = repeat_cv_evaluate(d.X, d.y, d.pts, c.learners, cv);
  fs::create_directories(c.output);
  std::ostringstream rows, summary;
  write_metrics_csv(rows, res.rows);
  write_metrics_csv(summary, res.summary);
  detail::write_text(c.output / "metrics.csv", rows.str());
  detail::write_text(c.output / "metrics_summary.csv", summary.str());
  detail::write_resolved(c, "cv");
}

/// Ambiguity decomposition of the design-1 CWM ensemble on the out-of-fold predictions H, plus the in-sample
/// GP-vs-CWM error comparison on the same H.
inline void cmd_decompose(const RunConfig& c) {
  const auto d = detail::load_data(c);
  const auto plan = make_folds(d.y.size(), c.folds, c.seed.value_or(0), 0);
  const auto l0 = run_level0(d.X, d.y, c.learners, plan);
  const auto w = fit_cwm(l0.H, d.y);
  const auto rep = ambiguity_decomposition(l0.H, w.beta, d.y);
  std::string per = "row,weighted_error,ambiguity,ensemble_error\n";
  for (Index i = 0; i < d.y.size(); ++i)
    per += std::to_string(i) + "," + format_real(rep.pointwise_weighted_error[i]) + "," +
           format_real(rep.pointwise_ambiguity[i]) + "," + format_real(rep.pointwise_ensemble_error[i]) + "\n";

  const auto gp = fit_gp(d.pts, d.y, l0.H, MeanKind::stacked, l0.labels, c.gp);
  const Vector gp_fit = gp.predict(d.pts, l0.H).mean;
  const auto ineq = verify_gp_inequality(gp_fit, cwm_predict(w, l0.H), d.y);
  std::string summary = "quantity,value\n";
  summary += "weighted_error," + format_real(rep.weighted_error) + "\n";
  summary += "ambiguity," + format_real(rep.ambiguity) + "\n";
  summary += "ensemble_error," + format_real(rep.ensemble_error) + "\n";
  summary += "identity_residual," + format_real(rep.residual) + "\n";
  summary += "in_sample_error_cwm," + format_real(ineq.mean_cwm) + "\n";
  summary += "in_sample_error_gp," + format_real(ineq.mean_gp) + "\n";
  summary += "fraction_gp_not_worse," + format_real(ineq.fraction_gp_not_worse) + "\n";
  fs::create_directories(c.output);
  detail::write_text(c.output / "decomposition.csv", per);
  detail::write_text(c.output / "decomposition_summary.csv", summary);
  detail::write_text(c.output / "weights.csv", detail::weights_csv(l0.labels, w.beta));
  detail::write_resolved(c, "decompose");
}

/// Combines metrics files (from cv runs) into one table: per region and method, the mean metrics and the
/// method's MSE rank within its region (1 = best).
inline void cmd_eval(const RunConfig& c) {
  if (c.metrics.empty()) throw ConfigError("eval.metrics: need at least one metrics file");
  struct Acc {
    double mse = 0, mae = 0, corr = 0;
    int count = 0;
  };
  std::map<std::string, std::map<std::string, Acc>> table;  // region -> method -> sums
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& path : c.metrics) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open metrics file " + path.string());
    std::string line;
    if (!std::getline(in, line) || gpstack::detail::trim(line).rfind("method,region,repeat,mse,mae,correlation", 0) != 0)
      throw ValidationError(path.string() + ": not a metrics file");
    long lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (gpstack::detail::trim(line).empty()) continue;
      const auto f = gpstack::detail::split_csv_line(line);
      if (f.size() < 6) throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": too few fields");
      if (f[2] == "mean") continue;
      const auto m = gpstack::detail::parse_real(f[3]), a = gpstack::detail::parse_real(f[4]),
                 r = gpstack::detail::parse_real(f[5]);
      if (!m || !a || !r) throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": malformed value");
      auto& acc = table[f[1]][f[0]];
      if (acc.count == 0) order.emplace_back(f[1], f[0]);
      acc.mse += *m;
      acc.mae += *a;
      acc.corr += *r;
      ++acc.count;
    }
  }
  std::string out = "region,method,mse,mae,correlation,mse_rank\n";
  for (const auto& [region, method] : order) {
    const auto& acc = table[region][method];
    const double mse_mean = acc.mse / acc.count;
    int rank = 1;
    for (const auto& [other, oacc] : table[region])
      if (other != method && oacc.mse / oacc.count < mse_mean) ++rank;
    out += region + "," + method + "," + format_real(mse_mean) + "," + format_real(acc.mae / acc.count) + "," +
           format_real(acc.corr / acc.count) + "," + std::to_string(rank) + "\n";
  }
  fs::create_directories(c.output);
  detail::write_text(c.output / "eval_summary.csv", out);
  detail::write_resolved(c, "eval");
}

/// Exit code for an error category: config 2, data and schema 3, numerical 4.
inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return 2;
    case ErrorKind::data:
    case ErrorKind::schema: return 3;
    case ErrorKind::numerical: return 4;
  }
  return 1;
}

}  // namespace gpstack::cli
