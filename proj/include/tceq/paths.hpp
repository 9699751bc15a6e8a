#pragma once

// Correlated Brownian increments and the truncated Ornstein-Uhlenbeck
// factor, discretized on a uniform grid. Generation is pure in
// (seed, stream, path, step), so batches are reproducible regardless of
// evaluation order.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "tceq/market.hpp"
#include "tceq/rng.hpp"

namespace tceq {

struct PathBatch {
  int batch = 0;
  int steps = 0;                 // N
  std::vector<double> dB;        // batch x N, row-major
  std::vector<double> dBbar;     // batch x N
  std::vector<double> X;         // batch x (N+1)
  std::uint64_t seed = 0;
  std::uint32_t stream = 0;

  double db(int p, int n) const { return dB[static_cast<std::size_t>(p) * steps + n]; }
  double dbbar(int p, int n) const { return dBbar[static_cast<std::size_t>(p) * steps + n]; }
  double x(int p, int n) const { return X[static_cast<std::size_t>(p) * (steps + 1) + n]; }
};

// dB = sqrt(dt)*xi1, dBbar = sqrt(dt)*(rho*xi1 + sqrt(1-rho^2)*xi2) with
// xi1, xi2 independent standard normals addressed by (path, step, stream).
inline void correlated_increments(const TimeGrid& grid, int batch, double rho,
                                  std::uint64_t seed, std::uint32_t stream,
                                  std::vector<double>& dB,
                                  std::vector<double>& dBbar,
                                  rng::Purpose purpose = rng::Purpose::kPathNoise) {
  if (batch < 1) throw std::invalid_argument("correlated_increments: batch must be >= 1");
  if (!(rho >= -1.0 && rho <= 1.0))
    throw std::invalid_argument("correlated_increments: |rho| must be <= 1");
  const int n_steps = grid.N;
  const double sq_dt = std::sqrt(grid.dt());
  const double comp = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  dB.assign(static_cast<std::size_t>(batch) * n_steps, 0.0);
  dBbar.assign(static_cast<std::size_t>(batch) * n_steps, 0.0);
  for (int p = 0; p < batch; ++p) {
    for (int n = 0; n < n_steps; ++n) {
      rng::Counter ctr{static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(n),
                       stream, static_cast<std::uint32_t>(purpose)};
      const auto [xi1, xi2] = rng::normal_pair(seed, ctr);
      dB[static_cast<std::size_t>(p) * n_steps + n] = sq_dt * xi1;
      dBbar[static_cast<std::size_t>(p) * n_steps + n] = sq_dt * (rho * xi1 + comp * xi2);
    }
  }
}

// Clamped Euler step for the truncated OU factor:
//   X_{n+1} = X_n + lambda * clamp(x_bar - X_n, -trunc, trunc) * dt + nu * dBbar_n.
inline double factor_step(double x, const FactorParams& fp, double dt, double dbbar) {
  const double pull = std::min(std::max(fp.x_bar - x, -fp.trunc), fp.trunc);
  return x + fp.lambda * pull * dt + fp.nu * dbbar;
}

inline void simulate_factor(const TimeGrid& grid, const FactorParams& fp,
                            const std::vector<double>& dBbar, int batch,
                            std::vector<double>& X) {
  const int N = grid.N;
  const double dt = grid.dt();
  X.assign(static_cast<std::size_t>(batch) * (N + 1), 0.0);
  for (int p = 0; p < batch; ++p) {
    double x = fp.x0;
    X[static_cast<std::size_t>(p) * (N + 1)] = x;
    for (int n = 0; n < N; ++n) {
      x = factor_step(x, fp, dt, dBbar[static_cast<std::size_t>(p) * N + n]);
      X[static_cast<std::size_t>(p) * (N + 1) + n + 1] = x;
    }
  }
}

inline PathBatch make_path_batch(const TimeGrid& grid, const MarketParams& mp,
                                 const FactorParams& fp, int batch,
                                 std::uint64_t seed, std::uint32_t stream,
                                 rng::Purpose purpose = rng::Purpose::kPathNoise) {
  PathBatch pb;
  pb.batch = batch;
  pb.steps = grid.N;
  pb.seed = seed;
  pb.stream = stream;
  correlated_increments(grid, batch, mp.rho, seed, stream, pb.dB, pb.dBbar, purpose);
  simulate_factor(grid, fp, pb.dBbar, batch, pb.X);
  return pb;
}

// Columnar CSV dump for debugging: path_id, step, dB, dBbar, X.
inline void dump_path_batch_csv(const PathBatch& pb, std::ostream& os) {
  os << "path_id,step,dB,dBbar,X\n";
  char line[160];
  for (int p = 0; p < pb.batch; ++p) {
    for (int n = 0; n < pb.steps; ++n) {
      std::snprintf(line, sizeof line, "%d,%d,%.17g,%.17g,%.17g\n", p, n,
                    pb.db(p, n), pb.dbbar(p, n), pb.x(p, n));
      os << line;
    }
  }
}

}  // namespace tceq
