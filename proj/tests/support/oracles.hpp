#pragma once
// Small reference implementations shared by the unit tests. Each one is
// written the slow, obvious way and never calls into the library.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

/// Residuals of y regressed on [1, X] via the normal equations.
inline std::vector<double> ols_residuals(const std::vector<double>& y, const std::vector<std::vector<double>>& xs) {
  const std::size_t n = y.size(), p = xs.size() + 1;
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  Eigen::VectorXd xty = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  auto col = [&](std::size_t j, std::size_t i) { return j == 0 ? 1.0 : xs[j - 1][i]; };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < p; ++a) {
      xty(static_cast<Eigen::Index>(a)) += col(a, i) * y[i];
      for (std::size_t b = 0; b < p; ++b) xtx(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += col(a, i) * col(b, i);
    }
  }
  const Eigen::VectorXd beta = xtx.inverse() * xty;
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n; ++i) {
    double fit = 0;
    for (std::size_t a = 0; a < p; ++a) fit += beta(static_cast<Eigen::Index>(a)) * col(a, i);
    r[i] = y[i] - fit;
  }
  return r;
}

inline double r_squared(const std::vector<double>& y, const std::vector<std::vector<double>>& xs) {
  const auto r = ols_residuals(y, xs);
  double m = 0;
  for (double v : y) m += v / static_cast<double>(y.size());
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += r[i] * r[i];
    ss_tot += (y[i] - m) * (y[i] - m);
  }
  return 1.0 - ss_res / ss_tot;
}

/// Enumerates every monotone boundary-anchored warping path and returns the cheapest.
inline double dtw_exhaustive(const std::vector<double>& r, const std::vector<double>& g) {
  double best = INFINITY;
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j, double acc) {
    acc += std::abs(r[i] - g[j]);
    if (i + 1 == r.size() && j + 1 == g.size()) {
      best = std::min(best, acc);
      return;
    }
    if (i + 1 < r.size()) walk(i + 1, j, acc);
    if (j + 1 < g.size()) walk(i, j + 1, acc);
    if (i + 1 < r.size() && j + 1 < g.size()) walk(i + 1, j + 1, acc);
  };
  walk(0, 0, 0.0);
  return best;
}

/// Central difference of f at x along coordinate i.
template <typename F>
double central_difference(F&& f, double& coord, double h) {
  const double saved = coord;
  coord = saved + h;
  const double up = f();
  coord = saved - h;
  const double down = f();
  coord = saved;
  return (up - down) / (2.0 * h);
}

inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace oracle
