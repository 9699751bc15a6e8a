#include "tceq/ode.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace tceq;

namespace {

MarketParams paper_market() {
  MarketParams mp;
  mp.r = 0.017;
  mp.sigma = 0.15;
  mp.zeta = 1.0;
  mp.gamma = 0.1;
  return mp;
}

}  // namespace

TEST(CompleteOde, ThetaZeroAnalyticSolution) {
  MarketParams mp = paper_market();
  TimeGrid grid{2.0, 200};
  const CompleteOdeSolution sol = solve_complete_ode(mp, 0.0, grid);
  for (int n = 0; n <= grid.N; ++n) {
    const double exact = std::exp(-mp.r * mp.zeta * (grid.T - grid.t(n)));
    EXPECT_NEAR(sol.A[n], exact, 1e-12);
  }
  EXPECT_NEAR(sol.a0(), std::exp(-0.034), 1e-9);
  EXPECT_NEAR(sol.a0(), 0.966571, 1e-6);
}

TEST(CompleteOde, TerminalConditionAndPositivity) {
  MarketParams mp = paper_market();
  for (double th : {0.0, 0.273, 2.0}) {
    const CompleteOdeSolution sol = solve_complete_ode(mp, th, TimeGrid{2.0, 64});
    EXPECT_DOUBLE_EQ(sol.A.back(), 1.0);
    for (double a : sol.A) EXPECT_GT(a, 0.0);
  }
}

TEST(CompleteOde, FourthOrderSelfConvergence) {
  // At paper-scale theta the RK4 error sits at the roundoff floor, so the
  // order is measured on a stiffer constant theta where truncation error
  // dominates.
  MarketParams mp = paper_market();
  const double th = 2.0;
  const double ref = solve_complete_ode(mp, th, TimeGrid{2.0, 100000}).a0();
  const double e1 = std::fabs(solve_complete_ode(mp, th, TimeGrid{2.0, 10}).a0() - ref);
  const double e2 = std::fabs(solve_complete_ode(mp, th, TimeGrid{2.0, 20}).a0() - ref);
  const double e3 = std::fabs(solve_complete_ode(mp, th, TimeGrid{2.0, 40}).a0() - ref);
  EXPECT_GE(e1 / e2, 12.0);
  EXPECT_GE(e2 / e3, 12.0);
}

TEST(CompleteOde, FineGridAgreement) {
  MarketParams mp = paper_market();
  const double a_coarse = solve_complete_ode(mp, 0.273, TimeGrid{2.0, 100}).a0();
  const double a_fine = solve_complete_ode(mp, 0.273, TimeGrid{2.0, 100000}).a0();
  EXPECT_LT(std::fabs(a_coarse - a_fine) / a_fine, 1e-8);
}

TEST(CompleteOde, InducedStrategy) {
  MarketParams mp = paper_market();
  const double th = 0.273;
  const CompleteOdeSolution sol = solve_complete_ode(mp, th, TimeGrid{2.0, 64});
  // At t = T: A = 1 so pi = theta / (sigma ((zeta+1) + gamma)).
  EXPECT_NEAR(sol.pi_hat.back(), th / (mp.sigma * (mp.zeta + 1.0 + mp.gamma)), 1e-14);
  // A'/A must equal f(A) along the solution to truncation accuracy.
  const TimeGrid grid{2.0, 64};
  for (int n = 1; n < grid.N; ++n) {
    const double da = (sol.A[n + 1] - sol.A[n - 1]) / (2.0 * grid.dt());
    const double fa = detail::ode_rhs(sol.A[n], th, mp);
    EXPECT_NEAR(da, fa, 5e-4 * std::max(1.0, std::fabs(fa)));
  }
}

TEST(CompleteOde, RejectsTinyGrids) {
  EXPECT_THROW(solve_complete_ode(paper_market(), 0.273, TimeGrid{2.0, 4}),
               std::invalid_argument);
}
