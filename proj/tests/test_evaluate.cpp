#include "tceq/evaluate.hpp"

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

// Constant factor pinned at its mean: theta is the constant x_bar.
FactorParams const_factor(double x) {
  FactorParams fp;
  fp.x_bar = x;
  fp.x0 = x;
  fp.nu = 0.0;
  fp.lambda = 0.0;
  return fp;
}

}  // namespace

TEST(EstimateJ, AllCashClosedForm) {
  MarketParams mp = paper_market();
  FactorParams fp = const_factor(0.273);
  TimeGrid grid{2.0, 40};
  ConstStrategy cash(0.0, mp.sigma);
  const ObjectiveEstimate est = estimate_J(cash, mp, fp, grid, 0, 50, 50, 7);
  EXPECT_NEAR(est.utility_term, -std::exp(-0.034), 1e-12);
  EXPECT_NEAR(est.variance_term, 0.0, 1e-20);
  EXPECT_NEAR(est.J, -std::exp(-0.034), 1e-12);
  EXPECT_NEAR(est.J, -0.966571, 1e-6);
}

TEST(EstimateJ, GammaZeroEqualsUtilityTerm) {
  MarketParams mp = paper_market();
  mp.gamma = 0.0;
  FactorParams fp = const_factor(0.273);
  TimeGrid grid{2.0, 20};
  ConstStrategy s(0.5, mp.sigma);
  const ObjectiveEstimate est = estimate_J(s, mp, fp, grid, 0, 40, 50, 11);
  EXPECT_DOUBLE_EQ(est.J, est.utility_term);
}

// Constant pi and constant theta make R_T - R_t Gaussian; J has a closed
// form through the Gaussian moment generating function.
TEST(EstimateJ, GaussianClosedFormWithinThreeStderr) {
  MarketParams mp = paper_market();
  const double th = 0.273, p = 0.8;
  FactorParams fp = const_factor(th);
  TimeGrid grid{2.0, 80};
  ConstStrategy s(p, mp.sigma);
  const ObjectiveEstimate est = estimate_J(s, mp, fp, grid, 0, 200, 500, 13);
  const double u = mp.sigma * p;
  const double mean = (mp.r + th * u - 0.5 * u * u) * grid.T;
  const double var = u * u * grid.T;
  const double util = -std::exp(-mp.zeta * mean + 0.5 * mp.zeta * mp.zeta * var) / mp.zeta;
  const double J = util - 0.5 * mp.gamma * var;
  EXPECT_NEAR(est.utility_term, util, 3.0 * est.utility_se);
  EXPECT_NEAR(est.variance_term, var, 3.0 * est.variance_se);
  EXPECT_NEAR(est.J, J, 3.0 * est.J_se);
}

TEST(EstimateJ, StderrShrinksWithBatch) {
  MarketParams mp = paper_market();
  FactorParams fp = const_factor(0.273);
  TimeGrid grid{1.0, 10};
  ConstStrategy s(1.0, mp.sigma);
  const ObjectiveEstimate small = estimate_J(s, mp, fp, grid, 0, 200, 20, 17);
  const ObjectiveEstimate big = estimate_J(s, mp, fp, grid, 0, 400, 20, 17);
  EXPECT_NEAR(big.J_se / small.J_se, 1.0 / std::sqrt(2.0), 0.25);
}

TEST(EstimateGain, ZeroEtaIsExactlyZero) {
  MarketParams mp = paper_market();
  FactorParams fp;  // stochastic factor
  TimeGrid grid{2.0, 40};
  ConstStrategy s(0.5, mp.sigma);
  const GainEstimate g = conditional_objective(s, mp, fp, grid, 10, 0.0, 4, 30, 30, 19);
  EXPECT_DOUBLE_EQ(g.gain, 0.0);
  EXPECT_DOUBLE_EQ(g.se, 0.0);
}

// The all-cash strategy is not an equilibrium: a positive perturbation
// picks up the positive risk premium, so the gain must be significantly
// positive. Detects sign errors in the paired estimator.
TEST(EstimateGain, CashStrategyHasPositiveGain) {
  MarketParams mp = paper_market();
  FactorParams fp = const_factor(0.273);
  TimeGrid grid{2.0, 40};
  ConstStrategy cash(0.0, mp.sigma);
  PerturbationSpec spec{0, 4, 0.5};
  const GainEstimate g = estimate_gain(cash, spec, mp, fp, grid, 100, 200, 23);
  EXPECT_GT(g.gain, 3.0 * g.se);
}

TEST(EstimateGain, PerturbationWindowValidation) {
  TimeGrid grid{2.0, 40};
  EXPECT_THROW((PerturbationSpec{38, 4, 0.5}).validate(grid), std::invalid_argument);
  EXPECT_NO_THROW((PerturbationSpec{36, 4, 0.5}).validate(grid));
}

TEST(VarianceUtility, BenchmarkDominatesUtilityAndCarriesMoreVariance) {
  MarketParams mp = paper_market();
  FactorParams fp;
  TimeGrid grid{2.0, 40};
  // gamma-weighted strategy invests less than the utility-only benchmark.
  ConstStrategy eq(0.6, mp.sigma);
  BenchmarkStrategy bench(mp, fp);
  const auto rows = variance_utility_comparison(eq, bench, mp, fp, grid, 4000, 29);
  ASSERT_EQ(rows.size(), static_cast<std::size_t>(grid.N + 1));
  int var_lower = 0;
  for (const auto& row : rows) {
    if (row.var_a <= row.var_b + 2.0 * row.var_diff_se) ++var_lower;
  }
  EXPECT_GE(var_lower, grid.N - 1);
  // Terminal row: R_T - R_T = 0 for both.
  EXPECT_DOUBLE_EQ(rows.back().var_a, 0.0);
  EXPECT_DOUBLE_EQ(rows.back().util_a, rows.back().util_b);
}

// theta == 0: u = 0, Y = r (T - t), R = r t, so M is constant and the
// regression must report nothing significant.
TEST(Martingale, ThetaZeroClosedFormIsExactlyDriftFree) {
  MarketParams mp = paper_market();
  FactorParams fp;
  fp.x_bar = -5.0;
  fp.x0 = -5.0;
  fp.nu = 0.05;
  TimeGrid grid{2.0, 40};

  class ClosedForm : public StrategyProcess {
   public:
    ClosedForm(const MarketParams& mp, const TimeGrid& grid) : mp_(mp), grid_(grid) {}
    void reset(int batch) override { y_.assign(batch, mp_.r * grid_.T); }
    void step(int n, const double*, const double*, double* u_out) override {
      for (std::size_t p = 0; p < y_.size(); ++p) {
        u_out[p] = 0.0;
        y_[p] = mp_.r * (grid_.T - grid_.t(n + 1));
      }
    }
    const std::vector<double>& y_state() const override { return y_; }

   private:
    MarketParams mp_;
    TimeGrid grid_;
    std::vector<double> y_;
  };

  ClosedForm strat(mp, grid);
  const MartingaleReport rep = martingale_residual(strat, mp, fp, grid, 2000, 31);
  EXPECT_LE(rep.max_abs_tstat(), 3.0);
  EXPECT_LE(rep.max_abs_mean_z(), 3.0);
}

// Constant theta with rho = 0: the exact BSDE solution is deterministic
// and given by the complete-market ODE, while R stays stochastic. M must
// be drift-free; a 0.05 offset on Y injected mid-path must be detected.
TEST(Martingale, OdeExactSolutionCleanAndCorruptionDetected) {
  MarketParams mp = paper_market();
  const double th = 0.273;
  FactorParams fp = const_factor(th);
  TimeGrid grid{2.0, 40};
  const CompleteOdeSolution sol = solve_complete_ode(mp, th, grid);
  CompleteOdeStrategy strat(sol, mp, th);

  const MartingaleReport clean = martingale_residual(strat, mp, fp, grid, 4000, 33);
  EXPECT_LE(clean.max_abs_mean_z(), 3.0);
  EXPECT_LE(clean.max_abs_tstat(), 4.0);  // 15 coefficient draws

  // Offset starts right after the n = 16 probe so the probe straddles it.
  const MartingaleReport bad =
      martingale_residual(strat, mp, fp, grid, 4000, 33, 0, 5, 0.05, 17);
  EXPECT_GT(bad.max_abs_tstat(), 3.0);
  EXPECT_GT(bad.max_abs_mean_z(), 3.0);
}

TEST(SensitivityReplay, DegenerateSweepEqualsReplayMean) {
  MarketParams mp = paper_market();
  FactorParams fp;
  TimeGrid grid{2.0, 10};
  TrainConfig tc;
  tc.epochs = 5;
  tc.batch = 16;
  BsdeSolver s({RegimeTag::kRhoZero, {}}, mp, fp, grid, tc);
  const auto rows = sensitivity_replay({&s}, {mp.gamma}, 200, 37);
  ASSERT_EQ(rows.size(), 1u);
  PathBatch pb = make_path_batch(grid, mp, fp, 200, 37, 0, rng::Purpose::kEvalNoise);
  const ReplayResult r = replay_strategy(s, pb);
  double m = 0;
  for (int p = 0; p < 200; ++p) m += r.strat_pi(p, 3);
  EXPECT_NEAR(rows[0].mean_pi[3], m / 200, 1e-14);
}
