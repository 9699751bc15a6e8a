#include "tceq/market.hpp"
#include "tceq/paths.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace tceq;

TEST(Theta, ClampsBothSides) {
  EXPECT_DOUBLE_EQ(theta(0.273), 0.273);
  EXPECT_DOUBLE_EQ(theta(-1.0), 0.0);
  EXPECT_DOUBLE_EQ(theta(20000.0, 10000.0), 10000.0);
}

TEST(DriftA, KnownValues) {
  MarketParams mp;
  mp.r = 0.017;
  mp.sigma = 0.15;
  EXPECT_DOUBLE_EQ(drift_a(0.0, 5.0, mp), mp.r);
  EXPECT_NEAR(drift_a(1.0, 0.273, mp), 0.046700, 1e-12);
  // Merton-like point pi = theta / sigma.
  EXPECT_NEAR(drift_a(0.273 / 0.15, 0.273, mp), 0.0542645, 1e-12);
}

TEST(MarketParams, Validation) {
  MarketParams mp;
  EXPECT_NO_THROW(mp.validate());
  mp.rho = 1.5;
  EXPECT_THROW(mp.validate(), std::invalid_argument);
}

namespace {

double sample_corr(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double va = 0, vb = 0, cab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
    cab += (a[i] - ma) * (b[i] - mb);
  }
  return cab / std::sqrt(va * vb);
}

}  // namespace

TEST(CorrelatedIncrements, PerfectCorrelationGivesIdenticalArrays) {
  TimeGrid grid{1.0, 8};
  std::vector<double> dB, dBbar;
  correlated_increments(grid, 16, 1.0, 11, 0, dB, dBbar);
  EXPECT_EQ(dB, dBbar);
}

TEST(CorrelatedIncrements, SampleCorrelationMatchesRho) {
  TimeGrid grid{1.0, 1};
  for (double rho : {0.0, -0.31}) {
    std::vector<double> dB, dBbar;
    correlated_increments(grid, 100000, rho, 23, 0, dB, dBbar);
    EXPECT_NEAR(sample_corr(dB, dBbar), rho, 0.02) << "rho=" << rho;
  }
}

TEST(CorrelatedIncrements, RejectsBadInputs) {
  TimeGrid grid{1.0, 4};
  std::vector<double> a, b;
  EXPECT_THROW(correlated_increments(grid, 0, 0.0, 1, 0, a, b), std::invalid_argument);
  EXPECT_THROW(correlated_increments(grid, 4, 1.5, 1, 0, a, b), std::invalid_argument);
}

TEST(CorrelatedIncrements, BitReproducible) {
  TimeGrid grid{2.0, 40};
  std::vector<double> a1, b1, a2, b2;
  correlated_increments(grid, 64, -0.5, 99, 3, a1, b1);
  correlated_increments(grid, 64, -0.5, 99, 3, a2, b2);
  EXPECT_EQ(a1, a2);
  EXPECT_EQ(b1, b2);
}

TEST(CorrelatedIncrements, PathSumCovarianceMatchesRhoT) {
  TimeGrid grid{2.0, 20};
  const int batch = 100000;
  const double rho = -0.31;
  std::vector<double> dB, dBbar;
  correlated_increments(grid, batch, rho, 7, 0, dB, dBbar);
  std::vector<double> sb(batch, 0.0), sbb(batch, 0.0);
  for (int p = 0; p < batch; ++p)
    for (int n = 0; n < grid.N; ++n) {
      sb[p] += dB[static_cast<std::size_t>(p) * grid.N + n];
      sbb[p] += dBbar[static_cast<std::size_t>(p) * grid.N + n];
    }
  // Empirical covariance entries vs (T, rho T; rho T, T) within 3 se.
  auto moment = [&](const std::vector<double>& x, const std::vector<double>& y,
                    double target) {
    double m = 0;
    for (int p = 0; p < batch; ++p) m += x[p] * y[p];
    m /= batch;
    double var = 0;
    for (int p = 0; p < batch; ++p) var += (x[p] * y[p] - m) * (x[p] * y[p] - m);
    var /= batch;
    const double se = std::sqrt(var / batch);
    EXPECT_NEAR(m, target, 3.0 * se);
  };
  moment(sb, sb, grid.T);
  moment(sbb, sbb, grid.T);
  moment(sb, sbb, rho * grid.T);
}

TEST(SimulateFactor, DriftFixedPoint) {
  TimeGrid grid{2.0, 20};
  FactorParams fp;
  fp.nu = 0.0;
  fp.x0 = fp.x_bar;
  std::vector<double> dBbar(3 * grid.N, 0.5), X;
  simulate_factor(grid, fp, dBbar, 3, X);
  for (int p = 0; p < 3; ++p)
    for (int n = 0; n <= grid.N; ++n)
      EXPECT_DOUBLE_EQ(X[static_cast<std::size_t>(p) * (grid.N + 1) + n], fp.x_bar);
}

TEST(SimulateFactor, DeterministicDecayTracksEulerAndConvergesToExp) {
  FactorParams fp;
  fp.lambda = 0.27;
  fp.x_bar = 0.0;
  fp.x0 = 1.0;
  fp.nu = 0.0;
  auto max_dev = [&](int N) {
    TimeGrid grid{2.0, N};
    std::vector<double> dBbar(grid.N, 0.0), X;
    simulate_factor(grid, fp, dBbar, 1, X);
    // Exact Euler recursion value.
    for (int n = 0; n <= N; ++n)
      EXPECT_NEAR(X[n], std::pow(1.0 - fp.lambda * grid.dt(), n), 1e-12);
    double dev = 0.0;
    for (int n = 0; n <= N; ++n)
      dev = std::max(dev, std::fabs(X[n] - std::exp(-fp.lambda * grid.t(n))));
    return dev;
  };
  const double d1 = max_dev(50);
  const double d2 = max_dev(100);
  const double d3 = max_dev(200);
  EXPECT_NEAR(d1 / d2, 2.0, 0.3);
  EXPECT_NEAR(d2 / d3, 2.0, 0.3);
}

TEST(SimulateFactor, StationaryMeanAtHorizon) {
  TimeGrid grid{2.0, 40};
  MarketParams mp;
  FactorParams fp;  // x0 = x_bar
  PathBatch pb = make_path_batch(grid, mp, fp, 100000, 31, 0);
  double m = 0;
  for (int p = 0; p < pb.batch; ++p) m += pb.x(p, grid.N);
  m /= pb.batch;
  double var = 0;
  for (int p = 0; p < pb.batch; ++p)
    var += (pb.x(p, grid.N) - m) * (pb.x(p, grid.N) - m);
  var /= pb.batch;
  const double se = std::sqrt(var / pb.batch);
  EXPECT_NEAR(m, fp.x_bar, 3.0 * se);
}

TEST(SimulateFactor, DriftClampBoundsStepSize) {
  TimeGrid grid{1.0, 10};
  FactorParams fp;
  fp.lambda = 1.0;
  fp.trunc = 2.0;
  fp.x_bar = 0.0;
  fp.x0 = 100.0;  // far outside the clamp window
  fp.nu = 0.0;
  std::vector<double> dBbar(grid.N, 0.0), X;
  simulate_factor(grid, fp, dBbar, 1, X);
  for (int n = 0; n < grid.N; ++n) {
    const double step = std::fabs(X[n + 1] - X[n]);
    EXPECT_LE(step, fp.lambda * fp.trunc * grid.dt() * (1.0 + 1e-12) + 1e-12);
  }
}

TEST(PathBatch, CsvDumpHasHeaderAndRows) {
  TimeGrid grid{1.0, 2};
  MarketParams mp;
  FactorParams fp;
  PathBatch pb = make_path_batch(grid, mp, fp, 2, 5, 0);
  std::ostringstream os;
  dump_path_batch_csv(pb, os);
  const std::string s = os.str();
  EXPECT_NE(s.find("path_id,step,dB,dBbar,X"), std::string::npos);
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 1 + 2 * 2);
}
