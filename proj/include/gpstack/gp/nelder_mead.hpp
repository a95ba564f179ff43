#pragma once

#include "gpstack/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace gpstack {

struct NelderMeadOptions {
  int max_evaluations = 400;
  double f_tolerance = 1e-6;  // absolute spread of simplex values
  double x_tolerance = 1e-6;  // largest vertex distance from the best vertex
  double initial_step = 0.5;
  int restarts = 1;           // fresh simplex around the incumbent after convergence
};

struct NelderMeadResult {
  Vector x;
  double value = std::numeric_limits<double>::infinity();
  int evaluations = 0;
  bool converged = false;
  std::vector<double> trace;  // best value after each iteration (non-increasing)
};

/// Minimises `f` by the Nelder-Mead simplex method. Non-finite values are treated as +inf.
inline NelderMeadResult nelder_mead(const std::function<double(const Vector&)>& f, const Vector& x0,
                                    const NelderMeadOptions& opt = {}) {
  const Index d = x0.size();
  NelderMeadResult res;
  auto eval = [&](const Vector& x) {
    ++res.evaluations;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  res.x = x0;
  res.value = eval(x0);
  if (d == 0) {
    res.converged = true;
    return res;
  }

  for (int round = 0; round <= opt.restarts; ++round) {
    std::vector<Vector> simplex(static_cast<std::size_t>(d) + 1, res.x);
    std::vector<double> values(simplex.size(), res.value);
    for (Index k = 0; k < d; ++k) {
      simplex[static_cast<std::size_t>(k) + 1][k] += opt.initial_step;
      values[static_cast<std::size_t>(k) + 1] = eval(simplex[static_cast<std::size_t>(k) + 1]);
    }
    std::vector<std::size_t> order(simplex.size());
    bool round_converged = false;
    while (res.evaluations < opt.max_evaluations) {
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
      const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];
      if (values[best] < res.value) {
        res.value = values[best];
        res.x = simplex[best];
      }
      res.trace.push_back(res.value);

      double xspread = 0.0;
      for (const auto& v : simplex) xspread = std::max(xspread, (v - simplex[best]).cwiseAbs().maxCoeff());
      const double fspread = values[worst] - values[best];
      if ((std::isfinite(fspread) && fspread <= opt.f_tolerance && xspread <= opt.x_tolerance * 1e3) ||
          xspread <= opt.x_tolerance) {
        round_converged = true;
        break;
      }

      Vector centroid = Vector::Zero(d);
      for (std::size_t k = 0; k < simplex.size(); ++k)
        if (k != worst) centroid += simplex[k];
      centroid /= static_cast<double>(d);

      const Vector xr = centroid + (centroid - simplex[worst]);
      const double fr = eval(xr);
      if (fr < values[best]) {
        const Vector xe = centroid + 2.0 * (centroid - simplex[worst]);
        const double fe = eval(xe);
        if (fe < fr) {
          simplex[worst] = xe;
          values[worst] = fe;
        } else {
          simplex[worst] = xr;
          values[worst] = fr;
        }
        continue;
      }
      if (fr < values[second]) {
        simplex[worst] = xr;
        values[worst] = fr;
        continue;
      }
      const bool outside = fr < values[worst];
      const Vector xc = outside ? Vector(centroid + 0.5 * (xr - centroid)) : Vector(centroid + 0.5 * (simplex[worst] - centroid));
      const double fc = eval(xc);
      if (fc < (outside ? fr : values[worst])) {
        simplex[worst] = xc;
        values[worst] = fc;
        continue;
      }
      for (std::size_t k = 0; k < simplex.size(); ++k) {
        if (k == best) continue;
        simplex[k] = simplex[best] + 0.5 * (simplex[k] - simplex[best]);
        values[k] = eval(simplex[k]);
      }
    }
    for (std::size_t k = 0; k < simplex.size(); ++k)
      if (values[k] < res.value) {
        res.value = values[k];
        res.x = simplex[k];
      }
    res.converged = round_converged;
    if (res.evaluations >= opt.max_evaluations) break;
  }
  if (!res.trace.empty()) res.trace.push_back(res.value);
  return res;
}

}  // namespace gpstack
