#pragma once

// Marginal-likelihood fitting of the space-time GP with a stacked (simplex) or linear mean.

#include "gpstack/cwm.hpp"
#include "gpstack/gp/condition.hpp"
#include "gpstack/gp/nelder_mead.hpp"
#include "gpstack/learners/enet.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace gpstack {

enum class MeanKind { stacked, linear };

inline std::string to_string(MeanKind k) { return k == MeanKind::stacked ? "stacked" : "linear"; }

inline MeanKind mean_kind_from_string(const std::string& s) {
  if (s == "stacked") return MeanKind::stacked;
  if (s == "linear") return MeanKind::linear;
  throw SchemaError("unknown GP mean kind '" + s + "'");
}

/// Optimiser settings plus optional fixed values and range bounds. Ranges are in degrees.
struct GpFitConfig {
  NelderMeadOptions optimiser{300, 1e-5, 1e-5, 0.7, 1};
  std::optional<double> fixed_range;
  std::optional<double> fixed_variance;
  std::optional<double> fixed_sigma_e2;
  std::optional<double> fixed_phi;
  std::optional<double> range_min;  // default 1e-3 x largest pairwise distance
  std::optional<double> range_max;  // default 10 x largest pairwise distance
  bool zero_covariance = false;     // drop the GP term: mean-only model with iid noise
};

struct GpFitTrace {
  std::vector<double> objective;  // negative log marginal likelihood, best so far per iteration
  int evaluations = 0;
  bool converged = false;
};

/// A fitted GP level-1 (or plain GP) model. `train_basis` holds the raw mean inputs at the training points:
/// level-0 out-of-fold predictions for a stacked mean, covariates for a linear mean.
struct GpModel {
  MeanKind mean_kind = MeanKind::stacked;
  GpHyperParams params;
  bool zero_covariance = false;
  std::vector<std::string> columns;
  Standardizer standardizer;  // linear mean only
  std::vector<SpaceTimePoint> points;
  Vector y;
  Matrix train_basis;

  /// Mean design: the basis itself (stacked) or [1, standardised basis] (linear).
  Matrix design(const Matrix& basis) const {
    if (basis.cols() != static_cast<Index>(columns.size()))
      throw SchemaError("GP mean basis has " + std::to_string(basis.cols()) + " columns, model expects " +
                        std::to_string(columns.size()));
    if (mean_kind == MeanKind::stacked) return basis;
    Matrix D(basis.rows(), basis.cols() + 1);
    D.col(0).setOnes();
    D.rightCols(basis.cols()) = standardizer.apply(basis);
    return D;
  }

  Vector mean(const Matrix& basis) const { return design(basis) * params.beta; }

  /// Factorises the training covariance; called after fitting and after loading.
  void build() {
    params.validate(mean_kind == MeanKind::stacked);
    if (static_cast<Index>(points.size()) != y.size() || train_basis.rows() != y.size())
      throw SchemaError("GpModel: training points, responses and mean basis disagree in length");
    residual_ = y - mean(train_basis);
    if (zero_covariance) return;
    Matrix K = CovarianceCache(points).covariance(params);
    K.diagonal().array() += params.sigma_e2;
    chol_ = robust_cholesky(K).llt;
    alpha_ = chol_.solve(residual_);
  }

  /// Latent predictive mean and variance at new points given the mean basis there.
  GpPosterior predict(const std::vector<SpaceTimePoint>& pts, const Matrix& basis, bool full_covariance = false) const {
    if (basis.rows() != static_cast<Index>(pts.size()))
      throw SchemaError("GpModel::predict: basis rows must match prediction points");
    GpPosterior post;
    post.mean = mean(basis);
    const auto m = static_cast<Index>(pts.size());
    if (zero_covariance) {
      post.variance = Vector::Zero(m);
      if (full_covariance) post.covariance = Matrix::Zero(m, m);
      return post;
    }
    if (alpha_.size() != y.size()) throw SchemaError("GpModel::predict: model not built");
    const Matrix Kc = build_cross_cov(pts, points, params);
    post.mean += Kc * alpha_;
    const Matrix V = chol_.matrixL().solve(Kc.transpose());
    if (full_covariance) {
      Matrix S = build_joint_cov(pts, params) - V.transpose() * V;
      S = 0.5 * (S + S.transpose());
      post.variance = S.diagonal();
      post.covariance = std::move(S);
    } else {
      post.variance = Vector::Constant(m, params.variance()) - V.colwise().squaredNorm().transpose();
    }
    post.variance = post.variance.cwiseMax(0.0);
    return post;
  }

  /// Same hyperparameters, conditioned only on the given training rows.
  GpModel restrict_to(const std::vector<Index>& rows) const {
    GpModel sub = *this;
    sub.points.clear();
    for (Index r : rows) sub.points.push_back(points[static_cast<std::size_t>(r)]);
    sub.y = select_rows(y, rows);
    sub.train_basis = select_rows(train_basis, rows);
    sub.build();
    return sub;
  }

  const Vector& training_residual() const { return residual_; }

private:
  Eigen::LLT<Matrix> chol_;
  Vector alpha_;
  Vector residual_;
};

namespace detail {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double max_pairwise_distance(const std::vector<SpaceTimePoint>& pts) {
  double d = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = 0; j < i; ++j) d = std::max(d, planar_distance(pts[i], pts[j]));
  return d;
}

/// Best mean coefficients for a whitened system.
inline Vector profile_beta(MeanKind kind, const Matrix& Dw, const Vector& yw, int cwm_iterations) {
  if (kind == MeanKind::stacked) return fit_cwm(Dw, yw, cwm_iterations).beta;
  return Dw.colPivHouseholderQr().solve(yw);
}

/// Raw optimiser coordinates <-> hyperparameters. Free coordinates are, in order: range (logistic between
/// log bounds), log variance, log sigma_e2, atanh-like phi.
struct Parameterisation {
  double log_range_lo = 0, log_range_hi = 0;
  std::optional<double> range, variance, sigma_e2, phi;

  Index size() const { return !range + !variance + !sigma_e2 + !phi; }

  GpHyperParams decode(const Vector& z) const {
    GpHyperParams p;
    Index k = 0;
    const double r = range ? *range : std::exp(log_range_lo + (log_range_hi - log_range_lo) * sigmoid(z[k++]));
    p.log_kappa = GpHyperParams::log_kappa_for_range(r);
    p.log_tau = -(variance ? std::log(*variance) : z[k++]);
    p.sigma_e2 = sigma_e2 ? *sigma_e2 : std::exp(z[k++]);
    p.phi = phi ? *phi : 0.999 * std::tanh(z[k++]);
    return p;
  }

  Vector encode(const GpHyperParams& p) const {
    Vector z(size());
    Index k = 0;
    if (!range) {
      const double u = (std::log(p.range()) - log_range_lo) / (log_range_hi - log_range_lo);
      z[k++] = logit(std::clamp(u, 1e-6, 1.0 - 1e-6));
    }
    if (!variance) z[k++] = std::log(p.variance());
    if (!sigma_e2) z[k++] = std::log(p.sigma_e2);
    if (!phi) z[k++] = std::atanh(std::clamp(p.phi / 0.999, -0.999, 0.999));
    return z;
  }
};

}  // namespace detail

/// Maximises the marginal likelihood over (range, variance, sigma_e2, phi) with the mean weights beta profiled
/// out: for fixed covariance parameters, beta is the simplex-constrained (stacked) or unconstrained (linear)
/// generalised least-squares solution, so every optimiser step evaluates the likelihood at its best beta.
inline GpModel fit_gp(const std::vector<SpaceTimePoint>& pts, const Vector& y, const Matrix& basis, MeanKind kind,
                      std::vector<std::string> columns, const GpFitConfig& cfg = {},
                      const std::optional<GpHyperParams>& init = std::nullopt, GpFitTrace* trace = nullptr) {
  const Index n = y.size();
  if (n < 5) throw ValidationError("fit_gp: need at least 5 observations, got " + std::to_string(n));
  if (static_cast<Index>(pts.size()) != n || basis.rows() != n)
    throw SchemaError("fit_gp: points, responses and mean basis disagree in length");
  if (basis.cols() < 1) throw ValidationError("fit_gp: need at least one mean column");
  if (columns.empty())
    for (Index j = 0; j < basis.cols(); ++j) columns.push_back("m" + std::to_string(j));
  if (static_cast<Index>(columns.size()) != basis.cols()) throw SchemaError("fit_gp: column names do not match basis");
  require_finite(y, "fit_gp: y");
  require_finite(basis, "fit_gp: mean basis");

  GpModel model;
  model.mean_kind = kind;
  model.columns = std::move(columns);
  model.points = pts;
  model.y = y;
  model.train_basis = basis;
  if (kind == MeanKind::linear) model.standardizer = Standardizer::fit(basis);
  const Matrix D = model.design(basis);

  // starting point from a covariance-free fit of the mean
  const Vector beta0 = detail::profile_beta(kind, D, y, 10000);
  const Vector r0 = y - D * beta0;
  const double vy = std::max((y.array() - y.mean()).square().mean(), 1e-12);
  const double vr = std::max(r0.squaredNorm() / static_cast<double>(n), 1e-6 * vy);

  if (cfg.zero_covariance) {
    model.zero_covariance = true;
    model.params.beta = beta0;
    model.params.sigma_e2 = vr;
    model.params.log_kappa = GpHyperParams::log_kappa_for_range(1.0);
    model.params.log_tau = 0.0;
    if (trace) *trace = GpFitTrace{{}, 0, true};
    model.build();
    return model;
  }

  const double dmax = detail::max_pairwise_distance(pts);
  bool one_month = true;
  for (const auto& p : pts) one_month = one_month && p.t == pts.front().t;

  detail::Parameterisation par;
  par.range = cfg.fixed_range;
  if (!par.range && !(dmax > 0)) par.range = 1.0;
  par.variance = cfg.fixed_variance;
  par.sigma_e2 = cfg.fixed_sigma_e2;
  par.phi = cfg.fixed_phi;
  if (!par.phi && one_month) par.phi = 0.0;
  const double rmin = cfg.range_min.value_or(1e-3 * dmax), rmax = cfg.range_max.value_or(10.0 * dmax);
  if (!par.range && !(rmin > 0 && rmax > rmin)) throw ConfigError("fit_gp: need 0 < range_min < range_max");
  par.log_range_lo = std::log(std::max(rmin, 1e-300));
  par.log_range_hi = std::log(std::max(rmax, 1e-300));
  if (par.range && !(*par.range > 0)) throw ConfigError("fit_gp: fixed range must be > 0");
  if (par.variance && !(*par.variance > 0)) throw ConfigError("fit_gp: fixed variance must be > 0");
  if (par.sigma_e2 && !(*par.sigma_e2 > 0)) throw ConfigError("fit_gp: fixed sigma_e2 must be > 0");
  if (par.phi && !(std::abs(*par.phi) < 1)) throw ConfigError("fit_gp: fixed phi must satisfy |phi| < 1");
  const double log_floor = std::log(1e-8 * vy), log_ceil = std::log(1e3 * vy);

  GpHyperParams start;
  if (init) {
    start = *init;
  } else {
    start.log_kappa = GpHyperParams::log_kappa_for_range(std::clamp(0.25 * dmax, rmin, rmax));
    start.log_tau = -std::log(0.5 * vr);
    start.sigma_e2 = 0.5 * vr;
    start.phi = one_month ? 0.0 : 0.3;
  }

  const CovarianceCache cache(pts);
  const double log2pi = std::log(2.0 * std::numbers::pi);
  auto objective = [&](const Vector& z) -> double {
    const GpHyperParams p = par.decode(z);
    if (!par.variance && (-p.log_tau < log_floor || -p.log_tau > log_ceil)) return INFINITY;
    if (!par.sigma_e2 && (std::log(p.sigma_e2) < log_floor || std::log(p.sigma_e2) > log_ceil)) return INFINITY;
    Matrix K = cache.covariance(p);
    K.diagonal().array() += p.sigma_e2;
    Eigen::LLT<Matrix> llt(K);
    if (llt.info() != Eigen::Success) return INFINITY;
    const auto L = llt.matrixL();
    const Matrix Dw = L.solve(D);
    const Vector yw = L.solve(y);
    const Vector beta = detail::profile_beta(kind, Dw, yw, 300);
    const double quad = (yw - Dw * beta).squaredNorm();
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return 0.5 * quad + 0.5 * logdet + 0.5 * static_cast<double>(n) * log2pi;
  };

  const Vector z0 = par.encode(start);
  if (!std::isfinite(objective(z0)))
    throw NumericalError("fit_gp: marginal likelihood is not finite at the initial hyperparameters; "
                         "rescale the response or the mean columns");
  const NelderMeadResult nm = nelder_mead(objective, z0, cfg.optimiser);
  if (trace) *trace = GpFitTrace{nm.trace, nm.evaluations, nm.converged};

  model.params = par.decode(nm.x);
  {
    Matrix K = cache.covariance(model.params);
    K.diagonal().array() += model.params.sigma_e2;
    const auto chol = robust_cholesky(K);
    const auto L = chol.llt.matrixL();
    Vector beta = detail::profile_beta(kind, L.solve(D), L.solve(y), 10000);
    if (kind == MeanKind::stacked) beta /= beta.sum();
    model.params.beta = beta;
  }
  model.build();
  return model;
}

/// Hyperparameters only; see fit_gp.
inline GpHyperParams fit_hyperparams(const std::vector<SpaceTimePoint>& pts, const Vector& y, const Matrix& basis,
                                     MeanKind kind, const GpFitConfig& cfg = {},
                                     const std::optional<GpHyperParams>& init = std::nullopt,
                                     GpFitTrace* trace = nullptr) {
  return fit_gp(pts, y, basis, kind, {}, cfg, init, trace).params;
}

/// Prediction with a stacked mean: `P` holds the level-0 predictions at `pts`, one column per learner.
inline GpPosterior gp_stacked_predict(const GpModel& model, const std::vector<SpaceTimePoint>& pts, const Matrix& P,
                                      bool full_covariance = false) {
  if (model.mean_kind != MeanKind::stacked) throw SchemaError("gp_stacked_predict: model does not have a stacked mean");
  if (P.cols() != static_cast<Index>(model.columns.size()))
    throw SchemaError("gp_stacked_predict: expected " + std::to_string(model.columns.size()) +
                      " level-0 prediction columns, got " + std::to_string(P.cols()));
  return model.predict(pts, P, full_covariance);
}

// serialisation

inline nlohmann::json hyperparams_to_json(const GpHyperParams& p) {
  return {{"log_kappa", p.log_kappa},
          {"log_tau", p.log_tau},
          {"sigma_e2", p.sigma_e2},
          {"phi", p.phi},
          {"beta", std::vector<double>(p.beta.data(), p.beta.data() + p.beta.size())}};
}

inline GpHyperParams hyperparams_from_json(const nlohmann::json& j) {
  try {
    GpHyperParams p;
    p.log_kappa = j.at("log_kappa").get<double>();
    p.log_tau = j.at("log_tau").get<double>();
    p.sigma_e2 = j.at("sigma_e2").get<double>();
    p.phi = j.at("phi").get<double>();
    const auto b = j.at("beta").get<std::vector<double>>();
    p.beta = Eigen::Map<const Vector>(b.data(), static_cast<Index>(b.size()));
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("GP hyperparameters: ") + e.what());
  }
}

inline nlohmann::json gp_to_json(const GpModel& m) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : m.points) pts.push_back({p.lon, p.lat, p.t});
  nlohmann::json basis = nlohmann::json::array();
  for (Index i = 0; i < m.train_basis.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index j = 0; j < m.train_basis.cols(); ++j) row.push_back(m.train_basis(i, j));
    basis.push_back(std::move(row));
  }
  nlohmann::json j{{"mean_kind", to_string(m.mean_kind)},
                   {"params", hyperparams_to_json(m.params)},
                   {"zero_covariance", m.zero_covariance},
                   {"columns", m.columns},
                   {"points", std::move(pts)},
                   {"y", std::vector<double>(m.y.data(), m.y.data() + m.y.size())},
                   {"train_basis", std::move(basis)}};
  if (m.mean_kind == MeanKind::linear)
    j["standardizer"] = {
        {"mean", std::vector<double>(m.standardizer.mean.data(), m.standardizer.mean.data() + m.standardizer.mean.size())},
        {"scale",
         std::vector<double>(m.standardizer.scale.data(), m.standardizer.scale.data() + m.standardizer.scale.size())}};
  return j;
}

inline GpModel gp_from_json(const nlohmann::json& j) {
  GpModel m;
  try {
    m.mean_kind = mean_kind_from_string(j.at("mean_kind").get<std::string>());
    m.params = hyperparams_from_json(j.at("params"));
    m.zero_covariance = j.at("zero_covariance").get<bool>();
    m.columns = j.at("columns").get<std::vector<std::string>>();
    for (const auto& p : j.at("points")) m.points.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<int>()});
    const auto y = j.at("y").get<std::vector<double>>();
    m.y = Eigen::Map<const Vector>(y.data(), static_cast<Index>(y.size()));
    const auto& basis = j.at("train_basis");
    m.train_basis.resize(static_cast<Index>(basis.size()), static_cast<Index>(m.columns.size()));
    for (std::size_t i = 0; i < basis.size(); ++i) {
      if (basis[i].size() != m.columns.size()) throw SchemaError("GP model: ragged train_basis");
      for (std::size_t c = 0; c < m.columns.size(); ++c)
        m.train_basis(static_cast<Index>(i), static_cast<Index>(c)) = basis[i][c].get<double>();
    }
    if (m.mean_kind == MeanKind::linear) {
      const auto mu = j.at("standardizer").at("mean").get<std::vector<double>>();
      const auto sc = j.at("standardizer").at("scale").get<std::vector<double>>();
      m.standardizer.mean = Eigen::Map<const Vector>(mu.data(), static_cast<Index>(mu.size()));
      m.standardizer.scale = Eigen::Map<const Vector>(sc.data(), static_cast<Index>(sc.size()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("GP model: ") + e.what());
  }
  m.build();
  return m;
}

}  // namespace gpstack
