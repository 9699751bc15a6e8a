#pragma once

// Equilibrium-strategy formulas, the interval projection, and the
// discretized backward-equation drifts shared by the trainer, the PDE
// oracle, and the evaluator.
//
// Sign convention: generators are stored as the drift of the
// forward-in-time recursion Y_{n+1} = Y_n + G*dt + Z*dBbar_n.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include "tceq/market.hpp"

namespace tceq {

// Closed bounded interval [lo, hi] of admissible strategy values (1-D box;
// an n-D box extension would project coordinatewise).
struct Constraint {
  double lo = -10000.0;
  double hi = 10000.0;

  void validate() const {
    if (!(lo <= hi)) throw std::invalid_argument("constraint: requires lo <= hi");
    if (!std::isfinite(lo) || !std::isfinite(hi))
      throw std::invalid_argument("constraint: bounds must be finite");
  }
};

enum class RegimeTag {
  kRhoZero,        // decoupled system, rho = 0
  kConstrained,    // coupled system with projected strategy
  kApproximate,    // rho != 0, strategy reuses the rho = 0 structure
  kCompleteMarket, // ODE-driven benchmark with constant theta
  kBenchmark,      // utility-only strategy, gamma = 0
};

struct StrategyRegime {
  RegimeTag tag = RegimeTag::kRhoZero;
  std::optional<Constraint> constraint;  // Constrained only

  void validate() const {
    if (tag == RegimeTag::kConstrained) {
      if (!constraint) throw std::invalid_argument("regime: Constrained requires a constraint");
      constraint->validate();
    } else if (constraint) {
      throw std::invalid_argument("regime: only Constrained carries a constraint");
    }
  }
};

inline std::string regime_name(RegimeTag tag) {
  switch (tag) {
    case RegimeTag::kRhoZero: return "rho_zero";
    case RegimeTag::kConstrained: return "constrained";
    case RegimeTag::kApproximate: return "approximate";
    case RegimeTag::kCompleteMarket: return "complete_market";
    case RegimeTag::kBenchmark: return "benchmark";
  }
  return "unknown";
}

struct BsdeState {
  double Y = 0.0;       // first backward value
  double Z = 0.0;       // its volatility loading w.r.t. Bbar
  double Ytilde = 0.0;  // conditional mean of the remaining log return
  double Ztilde = 0.0;  // its volatility loading
};

namespace detail {
inline double exp_neg_zeta_y(double zeta, double y) {
  // Y stays in a small band in every experiment; this only guards
  // against runaway iterates during training.
  assert(std::fabs(zeta * y) < 50.0);
  return std::exp(-zeta * y);
}
}  // namespace detail

// Amount-volatility u = sigma*pi in the decoupled regime:
//   u = e^{-zeta Y} theta / ((zeta+1) e^{-zeta Y} + gamma).
inline double u_hat_rho0(double y, double th, const MarketParams& mp) {
  const double a = detail::exp_neg_zeta_y(mp.zeta, y);
  return a * th / ((mp.zeta + 1.0) * a + mp.gamma);
}

// General unprojected target:
//   u = (e^{-zeta Y} theta - zeta e^{-zeta Y} rho Z - gamma rho Ztilde)
//       / ((zeta+1) e^{-zeta Y} + gamma).
inline double u_hat_general(double y, double z, double ztilde, double th,
                            const MarketParams& mp) {
  const double a = detail::exp_neg_zeta_y(mp.zeta, y);
  const double num = a * th - mp.zeta * a * mp.rho * z - mp.gamma * mp.rho * ztilde;
  return num / ((mp.zeta + 1.0) * a + mp.gamma);
}

// Orthogonal projection of a candidate u onto the sigma-scaled interval.
// The caller passes the strategy-unit interval; scaling happens here.
inline double project_interval(double w, const Constraint& c, double sigma) {
  return std::min(std::max(w, sigma * c.lo), sigma * c.hi);
}

// Forward drift of Y:
//   G = (zeta/2)(rho Z + u)^2 + (zeta(1-rho^2)/2) Z^2 - a(u).
inline double generator_y(double u, double z, double th, const MarketParams& mp) {
  const double mix = mp.rho * z + u;
  return 0.5 * mp.zeta * mix * mix +
         0.5 * mp.zeta * (1.0 - mp.rho * mp.rho) * z * z -
         drift_a_u(u, th, mp.r);
}

// Forward drift of Ytilde: G = -a(u).
inline double generator_ytilde(double u, double th, const MarketParams& mp) {
  return -drift_a_u(u, th, mp.r);
}

inline double euler_step_y(double y, double z, double drift, double dt, double dbbar) {
  return y + drift * dt + z * dbbar;
}

}  // namespace tceq
