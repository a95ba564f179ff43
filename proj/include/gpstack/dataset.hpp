#pragma once

// Survey ingestion, empirical-logit response and covariate design assembly.

#include "gpstack/core.hpp"

#include <json.hpp>

#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace gpstack {

/// Continuity correction used by the empirical logit.
inline constexpr double kLogitCorrection = 0.5;

/// Lags (months) expanded for every dynamic covariate.
inline constexpr std::array<int, 4> kLags{0, 2, 4, 6};

/// log((k + 1/2) / (n - k + 1/2)). Finite for every legal (k, n), including k = 0 and k = n.
inline double empirical_logit(long n_positive, long n_tested) {
  if (n_tested < 1 || n_positive < 0 || n_positive > n_tested)
    throw ValidationError("empirical_logit: need 0 <= n_positive <= n_tested and n_tested >= 1 (got " +
                          std::to_string(n_positive) + "/" + std::to_string(n_tested) + ")");
  return std::log((static_cast<double>(n_positive) + kLogitCorrection) /
                  (static_cast<double>(n_tested - n_positive) + kLogitCorrection));
}

struct SurveyRecord {
  double lon = 0.0;
  double lat = 0.0;
  int t = 0;  // month offset from the configured epoch
  long n_tested = 1;
  long n_positive = 0;
  double y = 0.0;  // empirical logit of n_positive / n_tested

  static SurveyRecord make(double lon, double lat, int t, long n_tested, long n_positive) {
    if (t < 0) throw ValidationError("survey month index must be >= 0");
    return {lon, lat, t, n_tested, n_positive, empirical_logit(n_positive, n_tested)};
  }
};

enum class CovariateKind { static_field, dynamic_monthly, dynamic_annual, synoptic };

inline std::string to_string(CovariateKind k) {
  switch (k) {
    case CovariateKind::static_field: return "static";
    case CovariateKind::dynamic_monthly: return "dynamic-monthly";
    case CovariateKind::dynamic_annual: return "dynamic-annual";
    case CovariateKind::synoptic: return "synoptic";
  }
  return "static";
}

inline CovariateKind covariate_kind_from_string(const std::string& s) {
  if (s == "static") return CovariateKind::static_field;
  if (s == "dynamic-monthly") return CovariateKind::dynamic_monthly;
  if (s == "dynamic-annual") return CovariateKind::dynamic_annual;
  if (s == "synoptic") return CovariateKind::synoptic;
  throw ConfigError("unknown covariate kind '" + s + "'");
}

inline bool is_dynamic(CovariateKind k) {
  return k == CovariateKind::dynamic_monthly || k == CovariateKind::dynamic_annual;
}

struct ColumnInfo {
  std::string name;
  int lag_months = 0;
  CovariateKind kind = CovariateKind::static_field;

  /// Column label used in schemas and model files ("lst" / "lst_lag2").
  std::string label() const {
    return is_dynamic(kind) ? name + "_lag" + std::to_string(lag_months) : name;
  }
  bool operator==(const ColumnInfo&) const = default;
};

/// n x m design matrix; row i aligns with survey i.
struct CovariateMatrix {
  Matrix values;
  std::vector<ColumnInfo> columns;

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    out.reserve(columns.size());
    for (const auto& c : columns) out.push_back(c.label());
    return out;
  }
  CovariateMatrix subset(const std::vector<Index>& rows_) const {
    return {select_rows(values, rows_), columns};
  }
};

/// Regular lon/lat lattice. (lon0, lat0) is the centre of the south-west cell;
/// grid files store row 0 as the northernmost row.
struct GridGeometry {
  double lon0 = 0.0;
  double lat0 = 0.0;
  double d_lon = 1.0;
  double d_lat = 1.0;
  int n_lon = 1;
  int n_lat = 1;

  Index cells() const { return static_cast<Index>(n_lon) * n_lat; }

  void validate() const {
    if (!(d_lon > 0) || !(d_lat > 0) || n_lon < 1 || n_lat < 1)
      throw ConfigError("grid geometry needs positive spacing and counts");
  }

  /// Nearest cell as (column, row-from-south), or nullopt outside the extent.
  std::optional<std::pair<int, int>> locate(double lon, double lat) const {
    const double fc = std::floor((lon - lon0) / d_lon + 0.5);
    const double fr = std::floor((lat - lat0) / d_lat + 0.5);
    if (!(fc >= 0 && fc < n_lon && fr >= 0 && fr < n_lat)) return std::nullopt;
    return std::make_pair(static_cast<int>(fc), static_cast<int>(fr));
  }

  double cell_lon(int col) const { return lon0 + col * d_lon; }
  double cell_lat(int row_from_south) const { return lat0 + row_from_south * d_lat; }

  bool operator==(const GridGeometry&) const = default;
};

/// One covariate: a static grid or a time series of grids indexed by month (or year).
struct CovariateLayer {
  std::string name;
  CovariateKind kind = CovariateKind::static_field;
  GridGeometry grid;
  int time_first = 0;  // months for dynamic-monthly, years for dynamic-annual
  int time_last = 0;
  std::vector<Matrix> slices;  // n_lat x n_lon, row 0 = north

  /// Slice index for a month offset, or nullopt if outside the time range.
  std::optional<std::size_t> slice_for_month(int month) const {
    if (!is_dynamic(kind)) return std::size_t{0};
    if (month < 0) return std::nullopt;
    const int unit = kind == CovariateKind::dynamic_annual ? month / 12 : month;
    if (unit < time_first || unit > time_last) return std::nullopt;
    return static_cast<std::size_t>(unit - time_first);
  }

  std::optional<double> sample(double lon, double lat, int month) const {
    auto cell = grid.locate(lon, lat);
    auto slice = slice_for_month(month);
    if (!cell || !slice) return std::nullopt;
    return slices[*slice](grid.n_lat - 1 - cell->second, cell->first);
  }
};

struct CovariateStack {
  std::vector<CovariateLayer> layers;

  std::vector<ColumnInfo> columns() const {
    std::vector<ColumnInfo> out;
    for (const auto& l : layers) {
      if (is_dynamic(l.kind))
        for (int lag : kLags) out.push_back({l.name, lag, l.kind});
      else
        out.push_back({l.name, 0, l.kind});
    }
    return out;
  }
};

/// Location-time triple used wherever predictions or design rows are requested.
struct SpaceTimePoint {
  double lon = 0.0;
  double lat = 0.0;
  int t = 0;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

/// Locale-independent decimal parse; the whole field must be consumed.
inline std::optional<double> parse_real(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return v;
}

inline std::optional<long> parse_integer(const std::string& s) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

inline constexpr const char* kSurveyHeader = "lon,lat,t,n_tested,n_positive";

inline std::vector<SurveyRecord> read_surveys(std::istream& in, const std::string& source = "<stream>") {
  std::vector<SurveyRecord> out;
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != kSurveyHeader)
    throw ValidationError(source + ":1: expected header '" + std::string(kSurveyHeader) + "'");
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto where = source + ":" + std::to_string(lineno) + ": ";
    auto f = detail::split_csv_line(line);
    if (f.size() != 5) throw ValidationError(where + "expected 5 fields, got " + std::to_string(f.size()));
    auto lon = detail::parse_real(f[0]);
    auto lat = detail::parse_real(f[1]);
    auto t = detail::parse_integer(f[2]);
    auto nt = detail::parse_integer(f[3]);
    auto np = detail::parse_integer(f[4]);
    if (!lon || !lat || !t || !nt || !np) throw ValidationError(where + "malformed field");
    if (!std::isfinite(*lon) || !std::isfinite(*lat)) throw ValidationError(where + "non-finite coordinate");
    if (*t < 0) throw ValidationError(where + "t must be >= 0");
    if (*nt < 1 || *np < 0 || *np > *nt)
      throw ValidationError(where + "need 0 <= n_positive <= n_tested and n_tested >= 1");
    out.push_back(SurveyRecord::make(*lon, *lat, static_cast<int>(*t), *nt, *np));
  }
  return out;
}

/// Loads a survey CSV. An empty file (header only) yields an empty list.
inline std::vector<SurveyRecord> load_surveys(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open survey file " + path.string());
  return read_surveys(in, path.string());
}

inline void write_surveys(std::ostream& out, const std::vector<SurveyRecord>& records) {
  out << kSurveyHeader << '\n';
  for (const auto& r : records)
    out << format_real(r.lon) << ',' << format_real(r.lat) << ',' << r.t << ',' << r.n_tested << ','
        << r.n_positive << '\n';
}

inline void save_surveys(const std::filesystem::path& path, const std::vector<SurveyRecord>& records) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write survey file " + path.string());
  write_surveys(out, records);
}

inline Matrix read_grid_file(const std::filesystem::path& path, const GridGeometry& g) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open grid file " + path.string());
  Matrix m(g.n_lat, g.n_lon);
  std::string line;
  int row = 0;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    if (row >= g.n_lat) throw ValidationError(path.string() + ": more than n_lat rows");
    auto f = detail::split_csv_line(line);
    if (static_cast<int>(f.size()) != g.n_lon)
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(g.n_lon) + " values");
    for (int c = 0; c < g.n_lon; ++c) {
      auto v = detail::parse_real(f[c]);
      if (!v || !std::isfinite(*v))
        throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": missing or malformed value");
      m(row, c) = *v;
    }
    ++row;
  }
  if (row != g.n_lat) throw ValidationError(path.string() + ": expected " + std::to_string(g.n_lat) + " rows");
  return m;
}

inline void write_grid_file(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write grid file " + path.string());
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << format_real(m(r, c));
    out << '\n';
  }
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (auto* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

inline std::string expand_time(std::string pattern, int t) {
  const auto pos = pattern.find("{t}");
  if (pos != std::string::npos) pattern.replace(pos, 3, std::to_string(t));
  return pattern;
}

}  // namespace detail

inline GridGeometry grid_from_json(const nlohmann::json& j, const std::string& where) {
  detail::reject_unknown_keys(j, {"lon0", "lat0", "d_lon", "d_lat", "n_lon", "n_lat"}, where);
  GridGeometry g;
  try {
    g.lon0 = j.at("lon0").get<double>();
    g.lat0 = j.at("lat0").get<double>();
    g.d_lon = j.at("d_lon").get<double>();
    g.d_lat = j.at("d_lat").get<double>();
    g.n_lon = j.at("n_lon").get<int>();
    g.n_lat = j.at("n_lat").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
  g.validate();
  return g;
}

inline nlohmann::json grid_to_json(const GridGeometry& g) {
  return {{"lon0", g.lon0}, {"lat0", g.lat0}, {"d_lon", g.d_lon},
          {"d_lat", g.d_lat}, {"n_lon", g.n_lon}, {"n_lat", g.n_lat}};
}

/// Reads a covariate stack manifest (JSON). Relative grid paths resolve against the manifest directory.
///
/// {"covariates": [
///   {"name": "elev", "kind": "static", "grid": {...}, "path": "elev.csv"},
///   {"name": "lst", "kind": "dynamic-monthly", "grid": {...}, "time_range": [0, 23], "path": "lst_{t}.csv"}]}
inline CovariateStack load_covariate_stack(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw ValidationError("cannot open covariate manifest " + manifest.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(manifest.string() + ": " + e.what());
  }
  detail::reject_unknown_keys(j, {"covariates"}, manifest.string());
  const auto base = manifest.parent_path();
  CovariateStack stack;
  for (const auto& c : j.at("covariates")) {
    const auto where = manifest.string() + ": covariate";
    detail::reject_unknown_keys(c, {"name", "kind", "grid", "time_range", "path"}, where);
    CovariateLayer layer;
    try {
      layer.name = c.at("name").get<std::string>();
      layer.kind = covariate_kind_from_string(c.at("kind").get<std::string>());
      layer.grid = grid_from_json(c.at("grid"), where + " '" + layer.name + "' grid");
      const auto pattern = c.at("path").get<std::string>();
      if (is_dynamic(layer.kind)) {
        const auto range = c.at("time_range").get<std::array<int, 2>>();
        if (range[1] < range[0]) throw ConfigError(where + " '" + layer.name + "': empty time_range");
        layer.time_first = range[0];
        layer.time_last = range[1];
      } else if (c.contains("time_range")) {
        throw ConfigError(where + " '" + layer.name + "': time_range given for a non-dynamic covariate");
      }
      for (int t = layer.time_first; t <= layer.time_last; ++t) {
        std::filesystem::path p = detail::expand_time(pattern, t);
        if (p.is_relative()) p = base / p;
        layer.slices.push_back(read_grid_file(p, layer.grid));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where + ": " + e.what());
    }
    for (const auto& other : stack.layers)
      if (other.name == layer.name) throw ConfigError(where + ": duplicate name '" + layer.name + "'");
    stack.layers.push_back(std::move(layer));
  }
  return stack;
}

/// Writes `stack` as a manifest plus one grid CSV per slice under `dir`.
inline void save_covariate_stack(const std::filesystem::path& dir, const CovariateStack& stack,
                                 const std::string& manifest_name = "covariates.json") {
  std::filesystem::create_directories(dir / "grids");
  nlohmann::json covs = nlohmann::json::array();
  for (const auto& l : stack.layers) {
    nlohmann::json c{{"name", l.name}, {"kind", to_string(l.kind)}, {"grid", grid_to_json(l.grid)}};
    if (is_dynamic(l.kind)) {
      c["time_range"] = {l.time_first, l.time_last};
      c["path"] = "grids/" + l.name + "_{t}.csv";
    } else {
      c["path"] = "grids/" + l.name + ".csv";
    }
    for (int t = l.time_first; t <= l.time_last; ++t)
      write_grid_file(dir / detail::expand_time(c["path"].get<std::string>(), t),
                      l.slices[static_cast<std::size_t>(t - l.time_first)]);
    covs.push_back(std::move(c));
  }
  std::ofstream out(dir / manifest_name);
  out << nlohmann::json{{"covariates", covs}}.dump(2) << '\n';
}

/// Nearest-cell design rows for arbitrary points; dynamic covariates get one column per lag.
inline CovariateMatrix assemble_design(const std::vector<SpaceTimePoint>& points, const CovariateStack& stack) {
  CovariateMatrix X;
  X.columns = stack.columns();
  X.values.resize(static_cast<Index>(points.size()), static_cast<Index>(X.columns.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    Index col = 0;
    for (const auto& layer : stack.layers) {
      const auto lags = is_dynamic(layer.kind) ? std::vector<int>(kLags.begin(), kLags.end()) : std::vector<int>{0};
      for (int lag : lags) {
        auto v = layer.sample(p.lon, p.lat, p.t - lag);
        if (!v)
          throw ValidationError("survey " + std::to_string(i) + ": covariate '" + layer.name + "' lag " +
                                std::to_string(lag) + " outside grid extent or time range");
        X.values(static_cast<Index>(i), col++) = *v;
      }
    }
  }
  return X;
}

inline std::vector<SpaceTimePoint> survey_points(const std::vector<SurveyRecord>& surveys) {
  std::vector<SpaceTimePoint> pts;
  pts.reserve(surveys.size());
  for (const auto& s : surveys) pts.push_back({s.lon, s.lat, s.t});
  return pts;
}

inline CovariateMatrix assemble_design(const std::vector<SurveyRecord>& surveys, const CovariateStack& stack) {
  return assemble_design(survey_points(surveys), stack);
}

inline CovariateMatrix assemble_design(const std::vector<SurveyRecord>& surveys,
                                       const std::filesystem::path& stack_manifest) {
  return assemble_design(surveys, load_covariate_stack(stack_manifest));
}

inline Vector responses(const std::vector<SurveyRecord>& surveys) {
  Vector y(static_cast<Index>(surveys.size()));
  for (std::size_t i = 0; i < surveys.size(); ++i) y[static_cast<Index>(i)] = surveys[i].y;
  return y;
}

/// Prediction lattice at one month; every cell carries a full covariate row.
struct PredictionGrid {
  GridGeometry geometry;
  int t = 0;
  CovariateMatrix covariates;

  /// Cell order: row-major from the north-west corner, matching grid files.
  std::vector<SpaceTimePoint> points() const {
    std::vector<SpaceTimePoint> pts;
    pts.reserve(static_cast<std::size_t>(geometry.cells()));
    for (int r = geometry.n_lat - 1; r >= 0; --r)
      for (int c = 0; c < geometry.n_lon; ++c) pts.push_back({geometry.cell_lon(c), geometry.cell_lat(r), t});
    return pts;
  }

  static PredictionGrid build(const GridGeometry& g, int t, const CovariateStack& stack) {
    g.validate();
    PredictionGrid pg{g, t, {}};
    pg.covariates = assemble_design(pg.points(), stack);
    return pg;
  }
};

}  // namespace gpstack
