#include "tceq/pde.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "tceq/fk.hpp"

using namespace tceq;

namespace {

MarketParams paper_market(double rho = 0.0) {
  MarketParams mp;
  mp.r = 0.017;
  mp.sigma = 0.15;
  mp.zeta = 1.0;
  mp.gamma = 0.1;
  mp.rho = rho;
  return mp;
}

FactorParams paper_factor() { return FactorParams{}; }

// Factor pinned far below zero: theta == 0 on the whole grid.
FactorParams dead_factor() {
  FactorParams fp;
  fp.x_bar = -5.0;
  fp.x0 = -5.0;
  fp.nu = 0.05;
  return fp;
}

}  // namespace

TEST(PdeGrid, DefaultDomainCoversStationaryBand) {
  FactorParams fp = paper_factor();
  TimeGrid grid{2.0, 40};
  const PdeGrid g = default_pde_grid(fp, grid);
  const double band = 6.0 * fp.nu / std::sqrt(2.0 * fp.lambda);
  EXPECT_LE(g.x_lo, fp.x_bar - band);
  EXPECT_GE(g.x_hi, fp.x_bar + band);
}

TEST(PdeF, ThetaZeroReducesToLinearClosedForm) {
  MarketParams mp = paper_market();
  FactorParams fp = dead_factor();
  TimeGrid grid{2.0, 40};
  PdeGrid pg = default_pde_grid(fp, grid, 7.0, 200, 400);
  ASSERT_LT(pg.x_hi, 0.0);  // theta vanishes everywhere on the grid
  const PdeSolution sol = solve_pde_f(mp, fp, pg, grid, 0.0);
  // Closed form f(t, x) = r (T - t), spatially constant.
  for (int k = 0; k <= pg.Nt; k += 40) {
    const double t = grid.T * k / pg.Nt;
    double lo = 1e300, hi = -1e300;
    for (int i = 0; i <= pg.M; ++i) {
      lo = std::min(lo, sol.at(sol.f, k, i));
      hi = std::max(hi, sol.at(sol.f, k, i));
    }
    EXPECT_LE(hi - lo, 1e-10);
    EXPECT_NEAR(sol.at(sol.f, k, pg.M / 2), mp.r * (grid.T - t), 1e-10);
  }
}

TEST(PdeF, TerminalSliceMatchesCondition) {
  MarketParams mp = paper_market();
  FactorParams fp = paper_factor();
  TimeGrid grid{2.0, 40};
  PdeGrid pg = default_pde_grid(fp, grid, 7.0, 100, 200);
  const PdeSolution s0 = solve_pde_f(mp, fp, pg, grid, 0.0);
  for (int i = 0; i <= pg.M; ++i) EXPECT_DOUBLE_EQ(s0.at(s0.f, pg.Nt, i), 0.0);
  // The printed-terminal variant stays runnable behind a flag.
  const PdeSolution s1 = solve_pde_f(mp, fp, pg, grid, 0.0, /*terminal_value=*/1.0);
  for (int i = 0; i <= pg.M; ++i) EXPECT_DOUBLE_EQ(s1.at(s1.f, pg.Nt, i), 1.0);
}

TEST(PdeF, ContinuityInRhoAtMachineScale) {
  MarketParams mp = paper_market();
  FactorParams fp = paper_factor();
  TimeGrid grid{2.0, 40};
  PdeGrid pg = default_pde_grid(fp, grid, 7.0, 100, 200);
  const PdeSolution a = solve_pde_f(mp, fp, pg, grid, 0.0);
  const PdeSolution b = solve_pde_f(mp, fp, pg, grid, 1e-9);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.f.size(); ++i)
    diff = std::max(diff, std::fabs(a.f[i] - b.f[i]));
  EXPECT_LE(diff, 1e-6);
}

TEST(PdeF, SelfConvergenceFirstOrderInTime) {
  MarketParams mp = paper_market();
  FactorParams fp = paper_factor();
  TimeGrid grid{2.0, 40};
  PdeGrid coarse = default_pde_grid(fp, grid, 7.0, 100, 100);
  PdeGrid mid = default_pde_grid(fp, grid, 7.0, 200, 400);
  PdeGrid fine = default_pde_grid(fp, grid, 7.0, 400, 1600);
  const PdeSolution sc = solve_pde_f(mp, fp, coarse, grid, -0.31);
  const PdeSolution sm = solve_pde_f(mp, fp, mid, grid, -0.31);
  const PdeSolution sf = solve_pde_f(mp, fp, fine, grid, -0.31);
  // Compare the t = 0 slice on the common coarse x-points.
  double e_cm = 0.0, e_mf = 0.0;
  for (int i = 0; i <= coarse.M; ++i) {
    const double x = coarse.x(i);
    e_cm = std::max(e_cm, std::fabs(sc.interp(sc.f, 0, x) - sm.interp(sm.f, 0, x)));
    e_mf = std::max(e_mf, std::fabs(sm.interp(sm.f, 0, x) - sf.interp(sf.f, 0, x)));
  }
  // dt shrinks 4x between consecutive levels; first order in time.
  EXPECT_GE(e_cm / e_mf, 2.5);
  EXPECT_LE(e_cm / e_mf, 8.0);
}

TEST(PdeG, ThetaZeroClosedFormAndTerminal) {
  MarketParams mp = paper_market();
  FactorParams fp = dead_factor();
  TimeGrid grid{2.0, 40};
  PdeGrid pg = default_pde_grid(fp, grid, 7.0, 100, 200);
  PdeSolution sol = solve_pde_f(mp, fp, pg, grid, 0.0);
  solve_pde_g(mp, fp, sol);
  for (int i = 0; i <= pg.M; ++i) EXPECT_DOUBLE_EQ(sol.at(sol.g, pg.Nt, i), 0.0);
  for (int k = 0; k <= pg.Nt; k += 50) {
    const double t = grid.T * k / pg.Nt;
    EXPECT_NEAR(sol.at(sol.g, k, pg.M / 3), mp.r * (grid.T - t), 1e-10);
  }
}

TEST(PdeG, ComparisonPrinciple) {
  FactorParams fp = paper_factor();
  TimeGrid grid{2.0, 40};
  PdeGrid pg = default_pde_grid(fp, grid, 7.0, 100, 200);
  MarketParams lo_r = paper_market();
  MarketParams hi_r = paper_market();
  hi_r.r = 0.03;
  PdeSolution a = solve_pde_f(lo_r, fp, pg, grid, 0.0);
  solve_pde_g(lo_r, fp, a);
  PdeSolution b = solve_pde_f(hi_r, fp, pg, grid, 0.0);
  solve_pde_g(hi_r, fp, b);
  for (std::size_t i = 0; i < a.g.size(); ++i) EXPECT_GE(b.g[i], a.g[i] - 1e-12);
}

TEST(PdeF, BoundUniformAcrossRho) {
  MarketParams mp = paper_market();
  FactorParams fp = paper_factor();
  TimeGrid grid{2.0, 40};
  PdeGrid pg = default_pde_grid(fp, grid, 7.0, 150, 300);
  const double bound_at_one =
      pde_max_abs(solve_pde_f(mp, fp, pg, grid, 1.0),
                  solve_pde_f(mp, fp, pg, grid, 1.0).f);
  for (double rho : {0.0, -0.31, 0.31, -0.62, 0.62, -0.93, 0.93, -1.0}) {
    const PdeSolution s = solve_pde_f(mp, fp, pg, grid, rho);
    EXPECT_LE(pde_max_abs(s, s.f), 1.1 * bound_at_one) << "rho=" << rho;
  }
}

TEST(FeynmanKac, PdeAgainstItselfIsExact) {
  MarketParams mp = paper_market();
  FactorParams fp = paper_factor();
  TimeGrid grid{2.0, 40};
  PdeGrid pg = default_pde_grid(fp, grid, 7.0, 200, 400);
  PdeSolution sol = solve_pde_f(mp, fp, pg, grid, 0.0);
  PathBatch pb = make_path_batch(grid, mp, fp, 200, 41, 0);
  const ReplayResult rr = pde_replay(sol, pb, mp, fp);
  const FkReport rep = feynman_kac_check(rr, pb, sol, fp);
  EXPECT_EQ(rep.worst_rms_y(), 0.0);
  EXPECT_EQ(rep.worst_rms_z(), 0.0);
  EXPECT_EQ(rep.excluded_fraction, 0.0);
}

TEST(FeynmanKac, FlagsOutOfDomainPaths) {
  MarketParams mp = paper_market();
  FactorParams fp = paper_factor();
  TimeGrid grid{2.0, 40};
  PdeGrid pg = default_pde_grid(fp, grid, 7.0, 100, 200);
  pg.x_hi = fp.x_bar + 0.02;  // artificially narrow
  pg.x_lo = fp.x_bar - 0.02;
  const PdeSolution sol = solve_pde_f(mp, fp, pg, grid, 0.0);
  PathBatch pb = make_path_batch(grid, mp, fp, 500, 43, 0);
  const ReplayResult rr = pde_replay(sol, pb, mp, fp);
  const FkReport rep = feynman_kac_check(rr, pb, sol, fp);
  EXPECT_GT(rep.excluded_fraction, 0.05);
}

TEST(PdeF, RejectsBadInputs) {
  MarketParams mp = paper_market();
  FactorParams fp = paper_factor();
  TimeGrid grid{2.0, 40};
  PdeGrid pg = default_pde_grid(fp, grid);
  EXPECT_THROW(solve_pde_f(mp, fp, pg, grid, 1.5), std::invalid_argument);
  PdeGrid bad = pg;
  bad.M = 2;
  EXPECT_THROW(solve_pde_f(mp, fp, bad, grid, 0.0), std::invalid_argument);
}
