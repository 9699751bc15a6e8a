#pragma once

// Market and factor model primitives: parameter sets, the truncated
// market price of risk, and the log-return drift.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tceq {

struct MarketParams {
  double r = 0.017;      // risk-free rate (per year)
  double sigma = 0.15;   // stock volatility (per sqrt-year)
  double zeta = 1.0;     // CARA risk aversion, > 0
  double gamma = 0.1;    // variance weight, >= 0 (0 only for the benchmark)
  double rho = 0.0;      // correlation of the two Brownian drivers, in [-1,1]

  void validate() const {
    if (!(r > 0.0)) throw std::invalid_argument("market.r: must be > 0");
    if (!(sigma > 0.0)) throw std::invalid_argument("market.sigma: must be > 0");
    if (!(zeta > 0.0)) throw std::invalid_argument("market.zeta: must be > 0");
    if (!(gamma >= 0.0)) throw std::invalid_argument("market.gamma: must be >= 0");
    if (!(rho >= -1.0 && rho <= 1.0))
      throw std::invalid_argument("market.rho: must lie in [-1,1]");
  }
};

struct FactorParams {
  double lambda = 0.27;   // mean-reversion speed (per year)
  double x_bar = 0.273;   // long-run mean
  double nu = 0.065;      // factor volatility (per sqrt-year)
  double x0 = 0.273;      // initial factor value
  double trunc = 10000.0; // truncation bound for theta and the drift clamp

  void validate() const {
    if (!(lambda >= 0.0)) throw std::invalid_argument("factor.lambda: must be >= 0");
    if (!(nu >= 0.0)) throw std::invalid_argument("factor.nu: must be >= 0");
    if (!(trunc > 0.0)) throw std::invalid_argument("factor.trunc: must be > 0");
  }
};

struct TimeGrid {
  double T = 2.0;  // horizon (years)
  int N = 40;      // number of uniform steps

  double dt() const { return T / static_cast<double>(N); }
  double t(int n) const { return T * static_cast<double>(n) / static_cast<double>(N); }

  void validate() const {
    if (!(T > 0.0)) throw std::invalid_argument("grid.T: must be > 0");
    if (N < 1) throw std::invalid_argument("grid.N: must be >= 1");
  }
};

// Market price of risk theta(x) = min(max(x, 0), trunc).
inline double theta(double x, double trunc = 10000.0) {
  return std::min(std::max(x, 0.0), trunc);
}

// Drift of the log return: a(pi, x) = r + sigma*theta(x)*pi - 0.5*(sigma*pi)^2.
inline double drift_a(double pi, double x, const MarketParams& mp,
                      double trunc = 10000.0) {
  const double u = mp.sigma * pi;
  return mp.r + theta(x, trunc) * u - 0.5 * u * u;
}

// Same drift expressed in the amount-volatility variable u = sigma*pi.
inline double drift_a_u(double u, double th, double r) {
  return r + th * u - 0.5 * u * u;
}

}  // namespace tceq
