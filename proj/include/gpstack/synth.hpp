#pragma once

// Synthetic prevalence surveys with known latent structure.
//
// Latent logit at survey i:  intercept + g(X_i) + f(s_i, t_i) + eps_i
//   g    fixed menu over standardised lag-0/lag-2 covariate values (see g_value)
//   f    space-time GP draw on the grid lattice (Matern nu=1 x AR(1)), via Kronecker Cholesky factors
//   eps  iid N(0, noise_sd^2)
// g and f are rescaled so their sample variances over the surveys are cov_share * V and (1 - cov_share) * V.

#include "gpstack/dataset.hpp"
#include "gpstack/gp/kernel.hpp"

#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace gpstack {

enum class Regime { covariate_heavy, covariance_heavy, balanced };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::covariate_heavy: return "covariate-heavy";
    case Regime::covariance_heavy: return "covariance-heavy";
    case Regime::balanced: return "balanced";
  }
  return "balanced";
}

inline Regime regime_from_string(const std::string& s) {
  if (s == "covariate-heavy") return Regime::covariate_heavy;
  if (s == "covariance-heavy") return Regime::covariance_heavy;
  if (s == "balanced") return Regime::balanced;
  throw ConfigError("unknown regime '" + s + "' (expected covariate-heavy, covariance-heavy or balanced)");
}

/// Covariate share of the signal variance: 0.8, 0.2 and 0.5.
inline double regime_covariate_share(Regime r) {
  switch (r) {
    case Regime::covariate_heavy: return 0.8;
    case Regime::covariance_heavy: return 0.2;
    case Regime::balanced: return 0.5;
  }
  return 0.5;
}

enum class GForm { mixed, linear };

struct ScenarioConfig {
  int n_surveys = 400;
  int n_static = 3;
  int n_dynamic = 3;
  int nx = 30;
  int ny = 30;
  double lon0 = 30.0;
  double lat0 = -5.0;
  double cell = 0.1;  // degrees
  int months = 12;    // survey months; covariates also cover the 6 lag months before them
  Regime regime = Regime::balanced;
  std::optional<double> covariate_share;  // overrides the regime ratio
  double range = 1.0;                     // GP range in degrees
  double phi = 0.7;
  double signal_variance = 1.0;
  double noise_sd = 0.2;
  double intercept = -0.5;
  double covariate_noise = 0.5;  // share of each covariate's variance that is cell-level white noise
  GForm g_form = GForm::mixed;
  long n_min = 20;
  long n_max = 100;
  std::uint64_t seed = 0;

  double share() const { return covariate_share.value_or(regime_covariate_share(regime)); }

  void validate() const {
    if (n_surveys < 1 || n_static < 0 || n_dynamic < 0 || n_static + n_dynamic < 1 || nx < 1 || ny < 1 || months < 1)
      throw ConfigError("scenario: counts must be >= 1");
    if (static_cast<long>(n_surveys) > static_cast<long>(nx) * ny * months)
      throw ConfigError("scenario: more surveys than lattice cells x months");
    if (!(cell > 0) || !(range > 0) || !(std::abs(phi) < 1) || !(signal_variance >= 0) || !(noise_sd >= 0))
      throw ConfigError("scenario: need cell > 0, range > 0, |phi| < 1, variances >= 0");
    if (!(share() >= 0 && share() <= 1)) throw ConfigError("scenario: covariate share must lie in [0, 1]");
    if (!(covariate_noise >= 0 && covariate_noise <= 1)) throw ConfigError("scenario: covariate_noise must lie in [0, 1]");
    if (n_min < 1 || n_max < n_min) throw ConfigError("scenario: need 1 <= n_min <= n_max");
    if (g_form == GForm::mixed && n_static + n_dynamic < 2)
      throw ConfigError("scenario: the mixed g needs at least two covariates");
  }
};

struct TruthRow {
  double lon, lat;
  int t;
  double latent, g, gp, noise;
};

struct SynthData {
  ScenarioConfig config;
  std::vector<SurveyRecord> surveys;
  CovariateStack stack;
  std::vector<TruthRow> truth;
  int first_month = 6;  // first survey month; covariates start at month 0
};

namespace detail {

inline double std_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * uniform01(rng));
}

/// Smooth random field on the grid: a few random plane waves, scaled to unit variance over the cells.
inline Matrix smooth_field(const GridGeometry& g, Rng& rng, int waves = 4) {
  Matrix m = Matrix::Zero(g.n_lat, g.n_lon);
  const double extent = std::max(g.n_lon * g.d_lon, g.n_lat * g.d_lat);
  for (int w = 0; w < waves; ++w) {
    const double angle = 2.0 * std::numbers::pi * uniform01(rng);
    const double freq = (0.5 + 1.5 * uniform01(rng)) * 2.0 * std::numbers::pi / extent;
    const double phase = 2.0 * std::numbers::pi * uniform01(rng);
    for (int r = 0; r < g.n_lat; ++r)
      for (int c = 0; c < g.n_lon; ++c) {
        const double x = g.cell_lon(c), y = g.cell_lat(g.n_lat - 1 - r);
        m(r, c) += std::cos(freq * (std::cos(angle) * x + std::sin(angle) * y) + phase);
      }
  }
  const double mean = m.mean();
  const double sd = std::sqrt((m.array() - mean).square().mean());
  return sd > 0 ? Matrix((m.array() - mean) / sd) : m;
}

inline Matrix white_field(const GridGeometry& g, Rng& rng) {
  Matrix m(g.n_lat, g.n_lon);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = std_normal(rng);
  return m;
}

inline double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size());
}

}  // namespace detail

/// The fixed covariate-effect menu. `x` holds lag-0 values of each covariate followed by lag-2 values of the
/// dynamic ones (all roughly unit variance).
///   mixed:  0.8 x0 + 1.5 max(0, x1 - 0.3) + sin(1.5 x2) + 0.7 x0 x1 + 0.6 tanh(2 x3) + 0.5 max(0, -x3_lag2)
///           + 0.4 x4 x5 (terms whose covariates do not exist are skipped)
///   linear: sum_k (k + 1) / m x_k
inline double g_value(const std::vector<double>& lag0, const std::vector<double>& lag2, GForm form) {
  const std::size_t m = lag0.size();
  if (form == GForm::linear) {
    double g = 0.0;
    for (std::size_t k = 0; k < m; ++k) g += static_cast<double>(k + 1) / static_cast<double>(m) * lag0[k];
    return g;
  }
  auto x = [&](std::size_t k) { return k < m ? lag0[k] : 0.0; };
  double g = 0.8 * x(0) + 1.5 * std::max(0.0, x(1) - 0.3) + std::sin(1.5 * x(2)) + 0.7 * x(0) * x(1);
  if (m > 3) g += 0.6 * std::tanh(2.0 * x(3));
  if (!lag2.empty()) g += 0.5 * std::max(0.0, -lag2.front());
  if (m > 5) g += 0.4 * x(4) * x(5);
  return g;
}

inline SynthData generate(const ScenarioConfig& cfg) {
  cfg.validate();
  SynthData out;
  out.config = cfg;
  const int lag_months = 6;
  const int total_months = cfg.months + lag_months;
  out.first_month = lag_months;
  const GridGeometry grid{cfg.lon0, cfg.lat0, cfg.cell, cfg.cell, cfg.nx, cfg.ny};

  // covariates: smooth spatial pattern (+ seasonal modulation for dynamic ones) plus cell-level noise
  Rng cov_rng(derive_seed(cfg.seed, 1));
  const double ws = std::sqrt(1.0 - cfg.covariate_noise), wn = std::sqrt(cfg.covariate_noise);
  for (int k = 0; k < cfg.n_static; ++k) {
    CovariateLayer layer{"s" + std::to_string(k), CovariateKind::static_field, grid, 0, 0, {}};
    layer.slices.push_back(ws * detail::smooth_field(grid, cov_rng) + wn * detail::white_field(grid, cov_rng));
    out.stack.layers.push_back(std::move(layer));
  }
  for (int k = 0; k < cfg.n_dynamic; ++k) {
    CovariateLayer layer{"d" + std::to_string(k), CovariateKind::dynamic_monthly, grid, 0, total_months - 1, {}};
    const Matrix base = detail::smooth_field(grid, cov_rng);
    const Matrix amp = detail::smooth_field(grid, cov_rng);
    const double phase = 2.0 * std::numbers::pi * uniform01(cov_rng);
    for (int t = 0; t < total_months; ++t) {
      const double season = std::sin(2.0 * std::numbers::pi * t / 12.0 + phase);
      const Matrix smooth = (base + season * amp) / std::sqrt(1.5);
      layer.slices.push_back(ws * smooth + wn * detail::white_field(grid, cov_rng));
    }
    out.stack.layers.push_back(std::move(layer));
  }

  // survey sites: distinct (cell, month) pairs
  Rng site_rng(derive_seed(cfg.seed, 2));
  std::set<std::pair<Index, int>> used;
  std::vector<std::pair<Index, int>> sites;
  while (static_cast<int>(sites.size()) < cfg.n_surveys) {
    const auto cell = static_cast<Index>(uniform_index(site_rng, static_cast<std::size_t>(grid.cells())));
    const int t = lag_months + static_cast<int>(uniform_index(site_rng, static_cast<std::size_t>(cfg.months)));
    if (used.insert({cell, t}).second) sites.emplace_back(cell, t);
  }
  std::vector<SpaceTimePoint> pts;
  for (const auto& [cell, t] : sites) {
    const int col = static_cast<int>(cell % cfg.nx), row = static_cast<int>(cell / cfg.nx);  // row from south
    pts.push_back({grid.cell_lon(col), grid.cell_lat(row), t});
  }
  const CovariateMatrix X = assemble_design(pts, out.stack);

  // covariate effect
  std::vector<double> g(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<double> lag0, lag2;
    Index col = 0;
    for (const auto& layer : out.stack.layers) {
      if (is_dynamic(layer.kind)) {
        lag0.push_back(X.values(static_cast<Index>(i), col));
        lag2.push_back(X.values(static_cast<Index>(i), col + 1));
        col += static_cast<Index>(kLags.size());
      } else {
        lag0.push_back(X.values(static_cast<Index>(i), col++));
      }
    }
    g[i] = g_value(lag0, lag2, cfg.g_form);
  }

  // GP draw over the whole lattice for the survey months: F = L_s Z L_t^T
  std::vector<double> f(pts.size(), 0.0);
  const double gp_share = 1.0 - cfg.share();
  if (gp_share > 0 && cfg.signal_variance > 0) {
    GpHyperParams hp;
    hp.log_kappa = GpHyperParams::log_kappa_for_range(cfg.range);
    hp.log_tau = 0.0;
    hp.phi = cfg.phi;
    std::vector<SpaceTimePoint> cells;
    for (int row = 0; row < cfg.ny; ++row)
      for (int col = 0; col < cfg.nx; ++col) cells.push_back({grid.cell_lon(col), grid.cell_lat(row), 0});
    const auto Ls = robust_cholesky(build_joint_cov(cells, hp));
    Matrix Kt(cfg.months, cfg.months);
    for (int a = 0; a < cfg.months; ++a)
      for (int b = 0; b < cfg.months; ++b) Kt(a, b) = ar1_correlation(cfg.phi, a - b);
    const auto Lt = robust_cholesky(Kt);
    Rng gp_rng(derive_seed(cfg.seed, 3));
    Matrix Z(static_cast<Index>(cells.size()), cfg.months);
    for (Index k = 0; k < Z.size(); ++k) Z.data()[k] = detail::std_normal(gp_rng);
    const Matrix F = Ls.llt.matrixL() * Z * Matrix(Lt.llt.matrixL()).transpose();
    for (std::size_t i = 0; i < sites.size(); ++i) f[i] = F(sites[i].first, sites[i].second - lag_months);
  }

  auto rescale = [&](std::vector<double>& v, double target) {
    const double var = detail::sample_variance(v);
    const double s = var > 0 ? std::sqrt(target / var) : 0.0;
    for (double& x : v) x *= s;
  };
  rescale(g, cfg.share() * cfg.signal_variance);
  rescale(f, gp_share * cfg.signal_variance);

  Rng obs_rng(derive_seed(cfg.seed, 4));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double eps = cfg.noise_sd * detail::std_normal(obs_rng);
    const double latent = cfg.intercept + g[i] + f[i] + eps;
    const double p = 1.0 / (1.0 + std::exp(-latent));
    const long N = cfg.n_min + static_cast<long>(uniform_index(obs_rng, static_cast<std::size_t>(cfg.n_max - cfg.n_min + 1)));
    std::binomial_distribution<long> bin(N, p);
    const long k = bin(obs_rng);
    out.surveys.push_back(SurveyRecord::make(pts[i].lon, pts[i].lat, pts[i].t, N, k));
    out.truth.push_back({pts[i].lon, pts[i].lat, pts[i].t, latent, g[i], f[i], eps});
  }
  return out;
}

inline void write_truth(std::ostream& out, const std::vector<TruthRow>& truth) {
  out << "lon,lat,t,latent,g,gp,noise\n";
  for (const auto& r : truth)
    out << format_real(r.lon) << ',' << format_real(r.lat) << ',' << r.t << ',' << format_real(r.latent) << ','
        << format_real(r.g) << ',' << format_real(r.gp) << ',' << format_real(r.noise) << '\n';
}

/// surveys.csv, covariates.json + grids/, truth.csv under `dir`.
inline void save_synth(const std::filesystem::path& dir, const SynthData& d) {
  std::filesystem::create_directories(dir);
  save_surveys(dir / "surveys.csv", d.surveys);
  save_covariate_stack(dir, d.stack, "covariates.json");
  std::ofstream out(dir / "truth.csv");
  if (!out) throw ValidationError("cannot write " + (dir / "truth.csv").string());
  write_truth(out, d.truth);
}

}  // namespace gpstack
