#pragma once

// Complete-market oracle: classic fourth-order Runge-Kutta for the
// terminal-value ODE A' = A f(A), A(T) = 1, where A = e^{-zeta Y} and
//
//   f(A) = -zeta (zeta+1) A^2 theta^2 / (2 ((zeta+1) A + gamma)^2)
//          + zeta A theta^2 / ((zeta+1) A + gamma) + r zeta,
//
// with constant theta. The induced strategy is
// pi = sigma^{-1} A theta / ((zeta+1) A + gamma).

#include <cmath>
#include <stdexcept>
#include <vector>

#include "tceq/market.hpp"

namespace tceq {

struct CompleteOdeSolution {
  std::vector<double> t;       // grid times, ascending
  std::vector<double> A;       // A(t) > 0, A(T) = 1
  std::vector<double> pi_hat;  // induced strategy

  double a0() const { return A.front(); }
};

namespace detail {

inline double ode_rhs_f(double A, double th, const MarketParams& mp) {
  const double den = (mp.zeta + 1.0) * A + mp.gamma;
  return -mp.zeta * (mp.zeta + 1.0) * A * A * th * th / (2.0 * den * den) +
         mp.zeta * A * th * th / den + mp.r * mp.zeta;
}

inline double ode_rhs(double A, double th, const MarketParams& mp) {
  return A * ode_rhs_f(A, th, mp);
}

}  // namespace detail

inline CompleteOdeSolution solve_complete_ode(const MarketParams& mp,
                                              double theta_const,
                                              const TimeGrid& grid) {
  if (grid.N < 10)
    throw std::invalid_argument("solve_complete_ode: grid.N must be >= 10");
  const double h = grid.dt();
  CompleteOdeSolution sol;
  sol.t.resize(grid.N + 1);
  sol.A.resize(grid.N + 1);
  sol.pi_hat.resize(grid.N + 1);
  for (int n = 0; n <= grid.N; ++n) sol.t[n] = grid.t(n);

  double a = 1.0;
  sol.A[grid.N] = a;
  for (int n = grid.N; n > 0; --n) {
    // RK4 with step -h, integrating backward from the terminal condition.
    const double k1 = detail::ode_rhs(a, theta_const, mp);
    const double k2 = detail::ode_rhs(a - 0.5 * h * k1, theta_const, mp);
    const double k3 = detail::ode_rhs(a - 0.5 * h * k2, theta_const, mp);
    const double k4 = detail::ode_rhs(a - h * k3, theta_const, mp);
    a -= h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
    if (!(a > 0.0))
      throw std::runtime_error("solve_complete_ode: A reached a nonpositive value");
    sol.A[n - 1] = a;
  }
  for (int n = 0; n <= grid.N; ++n) {
    const double den = (mp.zeta + 1.0) * sol.A[n] + mp.gamma;
    sol.pi_hat[n] = sol.A[n] * theta_const / (mp.sigma * den);
  }
  return sol;
}

}  // namespace tceq
