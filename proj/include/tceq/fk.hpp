#pragma once

// Feynman-Kac cross-validation: along simulated factor paths, compare a
// solver's (Y_n, Z_n) against the PDE representation Y = f(t, X),
// Z = f_x(t, X) nu. Paths leaving the PDE domain are excluded and the
// excluded fraction reported.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "tceq/bsde.hpp"
#include "tceq/pde.hpp"

namespace tceq {

struct FkReport {
  std::vector<double> rms_y, max_y;  // per sim slice n = 0..N
  std::vector<double> rms_z, max_z;  // per sim slice n = 0..N-1
  double excluded_fraction = 0.0;

  double worst_rms_y() const {
    double m = 0.0;
    for (double v : rms_y) m = std::max(m, v);
    return m;
  }
  double worst_rms_z() const {
    double m = 0.0;
    for (double v : rms_z) m = std::max(m, v);
    return m;
  }
};

// Replay whose Y and Z are read off the PDE solution itself; feeding this
// into feynman_kac_check must produce zero discrepancy.
inline ReplayResult pde_replay(const PdeSolution& pde, const PathBatch& pb,
                               const MarketParams& mp, const FactorParams& fp) {
  const int N = pb.steps;
  if (pde.grid.Nt % N != 0)
    throw std::invalid_argument("pde_replay: pde.Nt must be a multiple of grid.N");
  const int stride = pde.grid.Nt / N;
  ReplayResult r;
  r.batch = pb.batch;
  r.steps = N;
  r.Y.assign(static_cast<std::size_t>(pb.batch) * (N + 1), 0.0);
  r.Ytilde.assign(r.Y.size(), 0.0);
  r.Z.assign(static_cast<std::size_t>(pb.batch) * N, 0.0);
  r.u.assign(r.Z.size(), 0.0);
  r.pi.assign(r.Z.size(), 0.0);
  for (int p = 0; p < pb.batch; ++p) {
    for (int n = 0; n <= N; ++n) {
      const double y = pde.interp(pde.f, n * stride, pb.x(p, n));
      r.Y[static_cast<std::size_t>(p) * (N + 1) + n] = y;
      if (!pde.g.empty())
        r.Ytilde[static_cast<std::size_t>(p) * (N + 1) + n] =
            pde.interp(pde.g, n * stride, pb.x(p, n));
      if (n < N) {
        r.Z[static_cast<std::size_t>(p) * N + n] =
            pde.interp(pde.fx, n * stride, pb.x(p, n)) * fp.nu;
        const double th = theta(pb.x(p, n), fp.trunc);
        const double u = u_hat_rho0(y, th, mp);
        r.u[static_cast<std::size_t>(p) * N + n] = u;
        r.pi[static_cast<std::size_t>(p) * N + n] = u / mp.sigma;
      }
    }
  }
  return r;
}

inline FkReport feynman_kac_check(const ReplayResult& replay, const PathBatch& pb,
                                  const PdeSolution& pde, const FactorParams& fp) {
  const int N = pb.steps;
  if (replay.steps != N)
    throw std::invalid_argument("feynman_kac_check: replay/path step mismatch");
  if (pde.grid.Nt % N != 0)
    throw std::invalid_argument("feynman_kac_check: pde.Nt must be a multiple of grid.N");
  const int stride = pde.grid.Nt / N;

  FkReport rep;
  rep.rms_y.assign(N + 1, 0.0);
  rep.max_y.assign(N + 1, 0.0);
  rep.rms_z.assign(N, 0.0);
  rep.max_z.assign(N, 0.0);

  std::size_t total = 0, excluded = 0;
  for (int n = 0; n <= N; ++n) {
    double sq = 0.0, mx = 0.0;
    std::size_t cnt = 0;
    for (int p = 0; p < pb.batch; ++p) {
      bool interior = true;
      const double fval = pde.interp(pde.f, n * stride, pb.x(p, n), &interior);
      ++total;
      if (!interior) {
        ++excluded;
        continue;
      }
      const double d = replay.y(p, n) - fval;
      sq += d * d;
      mx = std::max(mx, std::fabs(d));
      ++cnt;
    }
    rep.rms_y[n] = cnt ? std::sqrt(sq / cnt) : 0.0;
    rep.max_y[n] = mx;
  }
  for (int n = 0; n < N; ++n) {
    double sq = 0.0, mx = 0.0;
    std::size_t cnt = 0;
    for (int p = 0; p < pb.batch; ++p) {
      bool interior = true;
      const double zval =
          pde.interp(pde.fx, n * stride, pb.x(p, n), &interior) * fp.nu;
      if (!interior) continue;
      const double d = replay.z(p, n) - zval;
      sq += d * d;
      mx = std::max(mx, std::fabs(d));
      ++cnt;
    }
    rep.rms_z[n] = cnt ? std::sqrt(sq / cnt) : 0.0;
    rep.max_z[n] = mx;
  }
  rep.excluded_fraction =
      total ? static_cast<double>(excluded) / static_cast<double>(total) : 0.0;
  return rep;
}

}  // namespace tceq
