#pragma once

// Finite-difference oracle for the approximate-equilibrium pair:
// the quasi-linear equation
//
//   f_t + m f_x + (1/2) v^2 f_xx = zeta rho f_x v phi(f) + (zeta/2) f_x^2 v^2
//                                  - r - theta phi(f) + ((zeta+1)/2) phi(f)^2
//
// and, given its solution, the linear equation
//
//   g_t + m g_x + (1/2) v^2 g_xx = -r - theta phi(f) + (1/2) phi(f)^2
//
// with phi(f) = e^{-zeta f} theta / ((zeta+1) e^{-zeta f} + gamma),
// m(x) = lambda clamp(x_bar - x, -trunc, trunc), v = nu.
//
// Scheme: backward in time, implicit linear operator (advection +
// diffusion, one tridiagonal solve per step), nonlinear right-hand side
// lagged one time slice. Zero-slope lateral boundaries via reflection.
// First order in time, second order in space.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "tceq/market.hpp"
#include "tceq/strategy.hpp"

namespace tceq {

struct PdeGrid {
  double x_lo = 0.0;
  double x_hi = 0.0;
  int M = 400;    // spatial intervals
  int Nt = 800;   // time intervals

  double dx() const { return (x_hi - x_lo) / static_cast<double>(M); }
  double x(int i) const { return x_lo + dx() * static_cast<double>(i); }

  void validate() const {
    if (!(x_hi > x_lo)) throw std::invalid_argument("pde: x_hi must exceed x_lo");
    if (M < 4 || Nt < 1) throw std::invalid_argument("pde: grid too coarse");
  }
};

// Domain wide enough that +/- `n_sd` standard deviations of the horizon
// factor distribution stay interior.
inline PdeGrid default_pde_grid(const FactorParams& fp, const TimeGrid& grid,
                                double n_sd = 7.0, int M = 400, int Nt = 800) {
  double sd;
  if (fp.lambda > 1e-12) {
    sd = fp.nu * std::sqrt(-std::expm1(-2.0 * fp.lambda * grid.T) /
                           (2.0 * fp.lambda));
    sd = std::max(sd, fp.nu / std::sqrt(2.0 * fp.lambda) * 0.999);
  } else {
    sd = fp.nu * std::sqrt(grid.T);
  }
  const double half = std::max(n_sd * sd, 1e-3);
  const double center = 0.5 * (fp.x_bar + fp.x0);
  PdeGrid g;
  g.x_lo = center - half - std::fabs(fp.x0 - fp.x_bar);
  g.x_hi = center + half + std::fabs(fp.x0 - fp.x_bar);
  g.M = M;
  g.Nt = Nt;
  return g;
}

struct PdeSolution {
  PdeGrid grid;
  TimeGrid tgrid;
  double rho = 0.0;
  // Row-major (Nt+1) x (M+1); slice k corresponds to time k * T / Nt.
  std::vector<double> f, fx;
  std::vector<double> g, gx;
  double max_boundary_slope = 0.0;  // boundary-influence monitor for f

  double at(const std::vector<double>& grid_fn, int k, int i) const {
    return grid_fn[static_cast<std::size_t>(k) * (grid.M + 1) + i];
  }
  // Linear interpolation in x at time slice k; clamps to the domain and
  // reports whether the query was interior.
  double interp(const std::vector<double>& grid_fn, int k, double xq,
                bool* interior = nullptr) const {
    const double dx = grid.dx();
    double s = (xq - grid.x_lo) / dx;
    if (interior) *interior = (s >= 0.0 && s <= grid.M);
    s = std::min(std::max(s, 0.0), static_cast<double>(grid.M));
    const int i = std::min(static_cast<int>(s), grid.M - 1);
    const double w = s - i;
    return (1.0 - w) * at(grid_fn, k, i) + w * at(grid_fn, k, i + 1);
  }
};

namespace detail {

inline double phi_of(double fval, double th, const MarketParams& mp) {
  const double e = std::exp(-mp.zeta * fval);
  return e * th / ((mp.zeta + 1.0) * e + mp.gamma);
}

// Thomas algorithm; diagonals are destroyed.
inline void solve_tridiagonal(std::vector<double>& lower, std::vector<double>& diag,
                              std::vector<double>& upper, std::vector<double>& rhs) {
  const std::size_t n = diag.size();
  for (std::size_t i = 1; i < n; ++i) {
    const double w = lower[i] / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  rhs[n - 1] /= diag[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) {
    rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
  }
}

// Centered spatial derivative with one-sided second-order edges.
inline void spatial_derivative(const double* f, int M, double dx, double* out) {
  out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dx);
  for (int i = 1; i < M; ++i) out[i] = (f[i + 1] - f[i - 1]) / (2.0 * dx);
  out[M] = (3.0 * f[M] - 4.0 * f[M - 1] + f[M - 2]) / (2.0 * dx);
}

}  // namespace detail

// Quasi-linear solve for f (and its derivative). The terminal slice is
// f(T, x) = terminal_value; zero matches the backward equation's terminal
// condition and is the default.
inline PdeSolution solve_pde_f(const MarketParams& mp, const FactorParams& fp,
                               const PdeGrid& pgrid, const TimeGrid& tgrid,
                               double rho, double terminal_value = 0.0,
                               double boundary_slope_tol = 1.0) {
  pgrid.validate();
  tgrid.validate();
  if (!(rho >= -1.0 && rho <= 1.0))
    throw std::invalid_argument("solve_pde_f: |rho| must be <= 1");
  const int M = pgrid.M, Nt = pgrid.Nt;
  const double dx = pgrid.dx();
  const double dt = tgrid.T / static_cast<double>(Nt);
  const double v = fp.nu;
  const double v2 = v * v;

  PdeSolution sol;
  sol.grid = pgrid;
  sol.tgrid = tgrid;
  sol.rho = rho;
  sol.f.assign(static_cast<std::size_t>(Nt + 1) * (M + 1), 0.0);
  sol.fx.assign(sol.f.size(), 0.0);

  std::vector<double> m_coef(M + 1), th(M + 1);
  for (int i = 0; i <= M; ++i) {
    const double x = pgrid.x(i);
    m_coef[i] = fp.lambda * std::min(std::max(fp.x_bar - x, -fp.trunc), fp.trunc);
    th[i] = theta(x, fp.trunc);
  }

  std::vector<double> cur(M + 1, terminal_value), nxt(M + 1), dcur(M + 1);
  std::vector<double> lower(M + 1), diag(M + 1), upper(M + 1), rhs(M + 1);

  for (int i = 0; i <= M; ++i)
    sol.f[static_cast<std::size_t>(Nt) * (M + 1) + i] = cur[i];
  detail::spatial_derivative(cur.data(), M, dx, dcur.data());
  for (int i = 0; i <= M; ++i)
    sol.fx[static_cast<std::size_t>(Nt) * (M + 1) + i] = dcur[i];

  for (int k = Nt; k > 0; --k) {
    // Nonlinear right-hand side lagged at the known (later) slice.
    for (int i = 0; i <= M; ++i) {
      const double ph = detail::phi_of(cur[i], th[i], mp);
      const double nl = mp.zeta * rho * dcur[i] * v * ph +
                        0.5 * mp.zeta * dcur[i] * dcur[i] * v2 - mp.r -
                        th[i] * ph + 0.5 * (mp.zeta + 1.0) * ph * ph;
      rhs[i] = cur[i] - dt * nl;
    }
    // Implicit linear operator (I - dt (m d_x + v^2/2 d_xx)) with
    // zero-slope boundaries by reflection.
    const double dcoef = 0.5 * v2 / (dx * dx);
    for (int i = 1; i < M; ++i) {
      const double acoef = m_coef[i] / (2.0 * dx);
      lower[i] = -dt * (dcoef - acoef);
      diag[i] = 1.0 + 2.0 * dt * dcoef;
      upper[i] = -dt * (dcoef + acoef);
    }
    diag[0] = 1.0 + 2.0 * dt * dcoef;
    upper[0] = -2.0 * dt * dcoef;
    lower[0] = 0.0;
    diag[M] = 1.0 + 2.0 * dt * dcoef;
    lower[M] = -2.0 * dt * dcoef;
    upper[M] = 0.0;

    detail::solve_tridiagonal(lower, diag, upper, rhs);
    nxt = rhs;

    detail::spatial_derivative(nxt.data(), M, dx, dcur.data());
    sol.max_boundary_slope = std::max(
        sol.max_boundary_slope, std::max(std::fabs(dcur[0]), std::fabs(dcur[M])));
    for (int i = 0; i <= M; ++i) {
      const double val = nxt[i];
      if (!std::isfinite(val))
        throw std::runtime_error("solve_pde_f: non-finite value at time slice " +
                                 std::to_string(k - 1));
      sol.f[static_cast<std::size_t>(k - 1) * (M + 1) + i] = val;
      sol.fx[static_cast<std::size_t>(k - 1) * (M + 1) + i] = dcur[i];
    }
    cur.swap(nxt);
  }
  if (sol.max_boundary_slope > boundary_slope_tol)
    throw std::runtime_error(
        "solve_pde_f: boundary slope " + std::to_string(sol.max_boundary_slope) +
        " exceeds tolerance; widen the spatial domain");
  return sol;
}

// Linear solve for g given the f solution on the same grid; g(T, .) = 0.
inline void solve_pde_g(const MarketParams& mp, const FactorParams& fp,
                        PdeSolution& sol) {
  const int M = sol.grid.M, Nt = sol.grid.Nt;
  const double dx = sol.grid.dx();
  const double dt = sol.tgrid.T / static_cast<double>(Nt);
  const double v2 = fp.nu * fp.nu;

  sol.g.assign(static_cast<std::size_t>(Nt + 1) * (M + 1), 0.0);
  sol.gx.assign(sol.g.size(), 0.0);

  std::vector<double> m_coef(M + 1), th(M + 1);
  for (int i = 0; i <= M; ++i) {
    const double x = sol.grid.x(i);
    m_coef[i] = fp.lambda * std::min(std::max(fp.x_bar - x, -fp.trunc), fp.trunc);
    th[i] = theta(x, fp.trunc);
  }

  std::vector<double> cur(M + 1, 0.0), dcur(M + 1);
  std::vector<double> lower(M + 1), diag(M + 1), upper(M + 1), rhs(M + 1);

  for (int k = Nt; k > 0; --k) {
    for (int i = 0; i <= M; ++i) {
      const double fval = sol.at(sol.f, k, i);
      const double ph = detail::phi_of(fval, th[i], mp);
      const double src = -mp.r - th[i] * ph + 0.5 * ph * ph;
      rhs[i] = cur[i] - dt * src;
    }
    const double dcoef = 0.5 * v2 / (dx * dx);
    for (int i = 1; i < M; ++i) {
      const double acoef = m_coef[i] / (2.0 * dx);
      lower[i] = -dt * (dcoef - acoef);
      diag[i] = 1.0 + 2.0 * dt * dcoef;
      upper[i] = -dt * (dcoef + acoef);
    }
    diag[0] = 1.0 + 2.0 * dt * dcoef;
    upper[0] = -2.0 * dt * dcoef;
    lower[0] = 0.0;
    diag[M] = 1.0 + 2.0 * dt * dcoef;
    lower[M] = -2.0 * dt * dcoef;
    upper[M] = 0.0;

    detail::solve_tridiagonal(lower, diag, upper, rhs);
    cur = rhs;
    detail::spatial_derivative(cur.data(), M, dx, dcur.data());
    for (int i = 0; i <= M; ++i) {
      if (!std::isfinite(cur[i]))
        throw std::runtime_error("solve_pde_g: non-finite value at time slice " +
                                 std::to_string(k - 1));
      sol.g[static_cast<std::size_t>(k - 1) * (M + 1) + i] = cur[i];
      sol.gx[static_cast<std::size_t>(k - 1) * (M + 1) + i] = dcur[i];
    }
  }
}

inline double pde_max_abs(const PdeSolution& sol, const std::vector<double>& fn) {
  double m = 0.0;
  for (double v : fn) m = std::max(m, std::fabs(v));
  (void)sol;
  return m;
}

}  // namespace tceq
