#pragma once

// Monte-Carlo evaluation of the objective J(t, pi), perturbation gains,
// and the comparison experiments. All paired comparisons run on common
// random numbers; conditional (time-t) quantities are estimated by
// splitting each outer path into fresh inner sub-paths at t.

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "tceq/bsde.hpp"
#include "tceq/market.hpp"
#include "tceq/ode.hpp"
#include "tceq/paths.hpp"
#include "tceq/pde.hpp"

namespace tceq {

// Constant-proportion strategy pi(t) = p.
class ConstStrategy : public StrategyProcess {
 public:
  ConstStrategy(double pi, double sigma) : u_(pi * sigma) {}
  void reset(int batch) override { batch_ = batch; }
  void step(int, const double*, const double*, double* u_out) override {
    for (int p = 0; p < batch_; ++p) u_out[p] = u_;
  }

 private:
  double u_;
  int batch_ = 0;
};

// Approximate-regime strategy read from a PDE solution: Y = f(t, X),
// u = phi(Y). Used for oracle replays and identity checks.
class PdeStrategy : public StrategyProcess {
 public:
  PdeStrategy(const PdeSolution& pde, const MarketParams& mp,
              const FactorParams& fp, const TimeGrid& grid)
      : pde_(pde), mp_(mp), fp_(fp) {
    if (pde.grid.Nt % grid.N != 0)
      throw std::invalid_argument("PdeStrategy: pde.Nt must be a multiple of grid.N");
    stride_ = pde.grid.Nt / grid.N;
  }
  void reset(int batch) override {
    batch_ = batch;
    y_.assign(batch, 0.0);
  }
  void step(int n, const double* xn, const double*, double* u_out) override {
    for (int p = 0; p < batch_; ++p) {
      y_[p] = pde_.interp(pde_.f, n * stride_, xn[p]);
      u_out[p] = u_hat_rho0(y_[p], theta(xn[p], fp_.trunc), mp_);
    }
  }
  const std::vector<double>& y_state() const override { return y_; }

 private:
  const PdeSolution& pde_;
  MarketParams mp_;
  FactorParams fp_;
  int stride_ = 1;
  int batch_ = 0;
  std::vector<double> y_;
};

// Complete-market equilibrium with constant theta, driven by the ODE
// solution A(t) = e^{-zeta Y(t)} on the same time grid.
class CompleteOdeStrategy : public StrategyProcess {
 public:
  CompleteOdeStrategy(const CompleteOdeSolution& sol, const MarketParams& mp,
                      double theta_const)
      : sol_(sol), mp_(mp), th_(theta_const) {}
  void reset(int batch) override {
    y_.assign(batch, -std::log(sol_.A.front()) / mp_.zeta);
  }
  void step(int n, const double*, const double*, double* u_out) override {
    const double a = sol_.A[n];
    const double u = a * th_ / ((mp_.zeta + 1.0) * a + mp_.gamma);
    for (std::size_t p = 0; p < y_.size(); ++p) {
      u_out[p] = u;
      y_[p] = -std::log(sol_.A[n + 1]) / mp_.zeta;
    }
  }
  const std::vector<double>& y_state() const override { return y_; }

 private:
  const CompleteOdeSolution& sol_;
  MarketParams mp_;
  double th_;
  std::vector<double> y_;
};

struct ObjectiveEstimate {
  double t = 0.0;
  double utility_term = 0.0, utility_se = 0.0;
  double variance_term = 0.0, variance_se = 0.0;
  double J = 0.0, J_se = 0.0;
};

struct PerturbationSpec {
  int t_index = 0;    // perturbation start, grid index
  int eps_steps = 4;  // window length in steps
  double eta = 0.0;   // strategy-unit shift

  void validate(const TimeGrid& grid) const {
    if (t_index < 0 || eps_steps < 1 || t_index + eps_steps > grid.N)
      throw std::invalid_argument("perturbation: window must satisfy 0 <= t < t+eps <= T");
  }
};

struct GainEstimate {
  double t = 0.0, eta = 0.0, eps = 0.0, rho = 0.0;
  double gain = 0.0, se = 0.0;
  ObjectiveEstimate base, perturbed;
};

namespace detail_eval {

inline double cara_utility(double x, double zeta) {
  return -std::exp(-zeta * x) / zeta;
}

struct OuterState {
  std::vector<double> x;       // factor value at t
  std::vector<double> y, yt;   // strategy state at t (may be empty)
};

inline OuterState run_outer(StrategyProcess& strat, const MarketParams& mp,
                            const FactorParams& fp, const TimeGrid& grid,
                            int t_index, int outer, std::uint64_t seed,
                            std::uint32_t stream) {
  OuterState st;
  st.x.assign(outer, fp.x0);
  strat.reset(outer);
  if (t_index == 0) {
    st.y = strat.y_state();
    st.yt = strat.ytilde_state();
    return st;
  }
  const double dt = grid.dt();
  const double sq_dt = std::sqrt(dt);
  const double comp = std::sqrt(std::max(0.0, 1.0 - mp.rho * mp.rho));
  std::vector<double> u(outer), db(outer);
  for (int n = 0; n < t_index; ++n) {
    for (int p = 0; p < outer; ++p) {
      rng::Counter ctr{static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(n),
                       stream, static_cast<std::uint32_t>(rng::Purpose::kEvalNoise)};
      const auto [xi1, xi2] = rng::normal_pair(seed, ctr);
      db[p] = sq_dt * (mp.rho * xi1 + comp * xi2);
    }
    strat.step(n, st.x.data(), db.data(), u.data());
    for (int p = 0; p < outer; ++p) st.x[p] = factor_step(st.x[p], fp, dt, db[p]);
  }
  st.y = strat.y_state();
  st.yt = strat.ytilde_state();
  return st;
}

}  // namespace detail_eval

// Conditional objective at grid time t via path splitting: `outer`
// realizations of the time-t state, `inner` fresh sub-paths each. When
// eta != 0 the perturbed strategy pi + eta 1_{[t, t+eps)} is evaluated on
// the same draws and the paired gain (J_pert - J_base) / eps is returned.
inline GainEstimate conditional_objective(StrategyProcess& strat,
                                          const MarketParams& mp,
                                          const FactorParams& fp,
                                          const TimeGrid& grid, int t_index,
                                          double eta, int eps_steps, int outer,
                                          int inner, std::uint64_t seed,
                                          std::uint32_t stream = 0) {
  if (t_index < 0 || t_index >= grid.N)
    throw std::invalid_argument("conditional_objective: t must satisfy 0 <= t < T");
  if (outer < 2 || inner < 2)
    throw std::invalid_argument("conditional_objective: need outer >= 2 and inner >= 2");
  if (eta != 0.0) PerturbationSpec{t_index, eps_steps, eta}.validate(grid);

  const detail_eval::OuterState outer_state =
      detail_eval::run_outer(strat, mp, fp, grid, t_index, outer, seed, stream);

  const int B = outer * inner;
  const int N = grid.N;
  const double dt = grid.dt();
  const double sq_dt = std::sqrt(dt);
  const double comp = std::sqrt(std::max(0.0, 1.0 - mp.rho * mp.rho));
  const double du = mp.sigma * eta;

  std::vector<double> x(B), y0s, yt0s;
  for (int o = 0; o < outer; ++o)
    for (int k = 0; k < inner; ++k) x[static_cast<std::size_t>(o) * inner + k] = outer_state.x[o];
  strat.reset(B);
  if (!outer_state.y.empty()) {
    y0s.resize(B);
    for (int o = 0; o < outer; ++o)
      for (int k = 0; k < inner; ++k)
        y0s[static_cast<std::size_t>(o) * inner + k] = outer_state.y[o];
    if (!outer_state.yt.empty()) {
      yt0s.resize(B);
      for (int o = 0; o < outer; ++o)
        for (int k = 0; k < inner; ++k)
          yt0s[static_cast<std::size_t>(o) * inner + k] = outer_state.yt[o];
    }
    strat.set_y_state(y0s, yt0s);
  }

  std::vector<double> r_base(B, 0.0), r_pert(B, 0.0);
  std::vector<double> u(B), db(B), dbb(B);
  for (int n = t_index; n < N; ++n) {
    for (int p = 0; p < B; ++p) {
      rng::Counter ctr{static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(n),
                       stream + 1,
                       static_cast<std::uint32_t>(rng::Purpose::kEvalNoise)};
      const auto [xi1, xi2] = rng::normal_pair(seed, ctr);
      db[p] = sq_dt * xi1;
      dbb[p] = sq_dt * (mp.rho * xi1 + comp * xi2);
    }
    strat.step(n, x.data(), dbb.data(), u.data());
    const bool in_window = eta != 0.0 && n >= t_index && n < t_index + eps_steps;
    for (int p = 0; p < B; ++p) {
      const double th = theta(x[p], fp.trunc);
      r_base[p] += drift_a_u(u[p], th, mp.r) * dt + u[p] * db[p];
      const double up = in_window ? u[p] + du : u[p];
      r_pert[p] += drift_a_u(up, th, mp.r) * dt + up * db[p];
      x[p] = factor_step(x[p], fp, dt, dbb[p]);
    }
  }
  for (int p = 0; p < B; ++p)
    if (!std::isfinite(r_base[p]) || !std::isfinite(r_pert[p]))
      throw std::runtime_error("conditional_objective: non-finite log return on path " +
                               std::to_string(p));

  // Per-outer conditional plug-in estimates.
  std::vector<double> jb(outer), jp(outer), ub(outer), up_(outer), vb(outer),
      vp(outer);
  for (int o = 0; o < outer; ++o) {
    double su_b = 0, su_p = 0, sr_b = 0, sr_p = 0;
    for (int k = 0; k < inner; ++k) {
      const std::size_t idx = static_cast<std::size_t>(o) * inner + k;
      su_b += detail_eval::cara_utility(r_base[idx], mp.zeta);
      su_p += detail_eval::cara_utility(r_pert[idx], mp.zeta);
      sr_b += r_base[idx];
      sr_p += r_pert[idx];
    }
    const double mu_b = sr_b / inner, mu_p = sr_p / inner;
    double var_b = 0, var_p = 0;
    for (int k = 0; k < inner; ++k) {
      const std::size_t idx = static_cast<std::size_t>(o) * inner + k;
      var_b += (r_base[idx] - mu_b) * (r_base[idx] - mu_b);
      var_p += (r_pert[idx] - mu_p) * (r_pert[idx] - mu_p);
    }
    var_b /= (inner - 1);
    var_p /= (inner - 1);
    ub[o] = su_b / inner;
    up_[o] = su_p / inner;
    vb[o] = var_b;
    vp[o] = var_p;
    jb[o] = ub[o] - 0.5 * mp.gamma * vb[o];
    jp[o] = up_[o] - 0.5 * mp.gamma * vp[o];
  }

  auto mean_se = [outer](const std::vector<double>& a, double& m, double& se) {
    m = 0;
    for (double v : a) m += v;
    m /= outer;
    double s = 0;
    for (double v : a) s += (v - m) * (v - m);
    se = std::sqrt(s / (outer - 1) / outer);
  };

  GainEstimate g;
  g.t = grid.t(t_index);
  g.eta = eta;
  g.eps = eps_steps * dt;
  g.rho = mp.rho;
  g.base.t = g.t;
  g.perturbed.t = g.t;
  mean_se(ub, g.base.utility_term, g.base.utility_se);
  mean_se(vb, g.base.variance_term, g.base.variance_se);
  mean_se(jb, g.base.J, g.base.J_se);
  mean_se(up_, g.perturbed.utility_term, g.perturbed.utility_se);
  mean_se(vp, g.perturbed.variance_term, g.perturbed.variance_se);
  mean_se(jp, g.perturbed.J, g.perturbed.J_se);

  std::vector<double> dj(outer);
  for (int o = 0; o < outer; ++o) dj[o] = jp[o] - jb[o];
  double dm, dse;
  mean_se(dj, dm, dse);
  g.gain = dm / g.eps;
  g.se = dse / g.eps;
  return g;
}

inline ObjectiveEstimate estimate_J(StrategyProcess& strat, const MarketParams& mp,
                                    const FactorParams& fp, const TimeGrid& grid,
                                    int t_index, int outer, int inner,
                                    std::uint64_t seed, std::uint32_t stream = 0) {
  return conditional_objective(strat, mp, fp, grid, t_index, /*eta=*/0.0,
                               /*eps_steps=*/1, outer, inner, seed, stream)
      .base;
}

inline GainEstimate estimate_gain(StrategyProcess& strat, const PerturbationSpec& spec,
                                  const MarketParams& mp, const FactorParams& fp,
                                  const TimeGrid& grid, int outer, int inner,
                                  std::uint64_t seed, std::uint32_t stream = 0) {
  spec.validate(grid);
  return conditional_objective(strat, mp, fp, grid, spec.t_index, spec.eta,
                               spec.eps_steps, outer, inner, seed, stream);
}

// Full-horizon rollout recording R_n, Y_n, and u_n along given paths.
struct HorizonRollout {
  int batch = 0, steps = 0;
  std::vector<double> R;  // batch x (N+1)
  std::vector<double> Y;  // batch x (N+1); zero if the strategy has no state
  std::vector<double> u;  // batch x N

  double r(int p, int n) const { return R[static_cast<std::size_t>(p) * (steps + 1) + n]; }
  double y(int p, int n) const { return Y[static_cast<std::size_t>(p) * (steps + 1) + n]; }
};

inline HorizonRollout roll_horizon(StrategyProcess& strat, const MarketParams& mp,
                                   const FactorParams& fp, const TimeGrid& grid,
                                   const PathBatch& pb) {
  const int B = pb.batch, N = grid.N;
  const double dt = grid.dt();
  HorizonRollout hr;
  hr.batch = B;
  hr.steps = N;
  hr.R.assign(static_cast<std::size_t>(B) * (N + 1), 0.0);
  hr.Y.assign(hr.R.size(), 0.0);
  hr.u.assign(static_cast<std::size_t>(B) * N, 0.0);
  strat.reset(B);
  if (!strat.y_state().empty())
    for (int p = 0; p < B; ++p) hr.Y[static_cast<std::size_t>(p) * (N + 1)] = strat.y_state()[p];
  std::vector<double> x(B), db(B), u(B);
  for (int p = 0; p < B; ++p) x[p] = pb.x(p, 0);
  for (int n = 0; n < N; ++n) {
    for (int p = 0; p < B; ++p) {
      x[p] = pb.x(p, n);
      db[p] = pb.dbbar(p, n);
    }
    strat.step(n, x.data(), db.data(), u.data());
    for (int p = 0; p < B; ++p) {
      const double th = theta(x[p], fp.trunc);
      hr.R[static_cast<std::size_t>(p) * (N + 1) + n + 1] =
          hr.r(p, n) + drift_a_u(u[p], th, mp.r) * dt + u[p] * pb.db(p, n);
      hr.u[static_cast<std::size_t>(p) * N + n] = u[p];
      if (!strat.y_state().empty())
        hr.Y[static_cast<std::size_t>(p) * (N + 1) + n + 1] = strat.y_state()[p];
    }
  }
  return hr;
}

// Figure-4 comparison: pooled sample utility and variance of R_T - R_t at
// every grid time for two strategies on common paths, with paired
// standard errors of the differences (influence-function based).
struct VarianceUtilityRow {
  double t = 0.0;
  double var_a = 0.0, var_b = 0.0, var_diff_se = 0.0;
  double util_a = 0.0, util_b = 0.0, util_diff_se = 0.0;
};

inline std::vector<VarianceUtilityRow> variance_utility_comparison(
    StrategyProcess& strat_a, StrategyProcess& strat_b, const MarketParams& mp,
    const FactorParams& fp, const TimeGrid& grid, int batch, std::uint64_t seed,
    std::uint32_t stream = 0) {
  PathBatch pb = make_path_batch(grid, mp, fp, batch, seed, stream,
                                 rng::Purpose::kEvalNoise);
  const HorizonRollout ra = roll_horizon(strat_a, mp, fp, grid, pb);
  const HorizonRollout rb = roll_horizon(strat_b, mp, fp, grid, pb);
  std::vector<VarianceUtilityRow> rows(grid.N + 1);
  std::vector<double> a(batch), b(batch);
  for (int n = 0; n <= grid.N; ++n) {
    for (int p = 0; p < batch; ++p) {
      a[p] = ra.r(p, grid.N) - ra.r(p, n);
      b[p] = rb.r(p, grid.N) - rb.r(p, n);
    }
    double ma = 0, mb = 0, ua = 0, ub = 0;
    for (int p = 0; p < batch; ++p) {
      ma += a[p];
      mb += b[p];
      ua += detail_eval::cara_utility(a[p], mp.zeta);
      ub += detail_eval::cara_utility(b[p], mp.zeta);
    }
    ma /= batch;
    mb /= batch;
    ua /= batch;
    ub /= batch;
    double va = 0, vb = 0;
    for (int p = 0; p < batch; ++p) {
      va += (a[p] - ma) * (a[p] - ma);
      vb += (b[p] - mb) * (b[p] - mb);
    }
    va /= (batch - 1);
    vb /= (batch - 1);
    double s_var = 0, s_util = 0;
    for (int p = 0; p < batch; ++p) {
      const double if_var =
          ((a[p] - ma) * (a[p] - ma) - va) - ((b[p] - mb) * (b[p] - mb) - vb);
      const double if_util = (detail_eval::cara_utility(a[p], mp.zeta) - ua) -
                             (detail_eval::cara_utility(b[p], mp.zeta) - ub);
      s_var += if_var * if_var;
      s_util += if_util * if_util;
    }
    VarianceUtilityRow& row = rows[n];
    row.t = grid.t(n);
    row.var_a = va;
    row.var_b = vb;
    row.var_diff_se = std::sqrt(s_var / (batch - 1) / batch);
    row.util_a = ua;
    row.util_b = ub;
    row.util_diff_se = std::sqrt(s_util / (batch - 1) / batch);
  }
  return rows;
}

// Approximate-vs-constrained comparison on common paths. Reports both the
// mean strategy and the mean utility level -e^{-zeta Y_t}; the terminal
// row evaluates the shared terminal formula at Y_T = 0 exactly.
struct Table1Row {
  double t = 0.0;
  double pi_approx = 0.0, pi_constr = 0.0, rel_pi_permille = 0.0;
  double val_approx = 0.0, val_constr = 0.0, rel_val_permille = 0.0;
};

inline std::vector<Table1Row> table1_comparison(const BsdeSolver& approx,
                                                const BsdeSolver& constr,
                                                const std::vector<double>& times,
                                                int batch, std::uint64_t seed,
                                                std::uint32_t stream = 0) {
  const MarketParams& mp = approx.market();
  const TimeGrid& grid = approx.grid();
  if (constr.grid().N != grid.N || constr.market().rho != mp.rho ||
      constr.market().gamma != mp.gamma)
    throw std::invalid_argument("table1_comparison: solver configurations differ");
  PathBatch pb = make_path_batch(grid, mp, approx.factor(), batch, seed, stream,
                                 rng::Purpose::kEvalNoise);
  const ReplayResult ra = replay_strategy(approx, pb);
  const ReplayResult rc = replay_strategy(constr, pb);

  std::vector<Table1Row> rows;
  for (double t : times) {
    const int n = static_cast<int>(t / grid.dt() + 0.5);
    if (n < 0 || n > grid.N)
      throw std::invalid_argument("table1_comparison: probe time off the grid");
    Table1Row row;
    row.t = t;
    double pa = 0, pc = 0, va = 0, vc = 0;
    if (n == grid.N) {
      // Both regimes share the terminal strategy at Y_T = 0.
      for (int p = 0; p < batch; ++p) {
        const double th = theta(pb.x(p, n), approx.factor().trunc);
        const double u = th / ((mp.zeta + 1.0) + mp.gamma);
        pa += u / mp.sigma;
        pc += u / mp.sigma;
      }
      va = -1.0 * batch;
      vc = -1.0 * batch;
    } else {
      for (int p = 0; p < batch; ++p) {
        pa += ra.strat_pi(p, n);
        pc += rc.strat_pi(p, n);
        va += -std::exp(-mp.zeta * ra.y(p, n));
        vc += -std::exp(-mp.zeta * rc.y(p, n));
      }
    }
    row.pi_approx = pa / batch;
    row.pi_constr = pc / batch;
    row.val_approx = va / batch;
    row.val_constr = vc / batch;
    row.rel_pi_permille =
        (row.pi_approx - row.pi_constr) / std::fabs(row.pi_constr) * 1000.0;
    row.rel_val_permille =
        (row.val_approx - row.val_constr) / std::fabs(row.val_constr) * 1000.0;
    rows.push_back(row);
  }
  return rows;
}

// Mean strategy path per parameter value over common paths; one solver per
// value, all sharing seed and grid.
struct SweepRow {
  double value = 0.0;
  std::vector<double> mean_pi;     // per step
  double time_avg_mean_pi = 0.0;
};

inline std::vector<SweepRow> sensitivity_replay(
    const std::vector<const BsdeSolver*>& solvers, const std::vector<double>& values,
    int batch, std::uint64_t seed, std::uint32_t stream = 0) {
  if (solvers.empty() || solvers.size() != values.size())
    throw std::invalid_argument("sensitivity_replay: solver/value count mismatch");
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < solvers.size(); ++i) {
    const BsdeSolver& s = *solvers[i];
    PathBatch pb = make_path_batch(s.grid(), s.market(), s.factor(), batch, seed,
                                   stream, rng::Purpose::kEvalNoise);
    const ReplayResult r = replay_strategy(s, pb);
    SweepRow row;
    row.value = values[i];
    row.mean_pi.assign(s.grid().N, 0.0);
    for (int n = 0; n < s.grid().N; ++n) {
      double m = 0;
      for (int p = 0; p < batch; ++p) m += r.strat_pi(p, n);
      row.mean_pi[n] = m / batch;
      row.time_avg_mean_pi += row.mean_pi[n];
    }
    row.time_avg_mean_pi /= s.grid().N;
    rows.push_back(std::move(row));
  }
  return rows;
}

// Martingale diagnostic: M_n = e^{-zeta (R_n + Y_n)} must be driftless
// under an exact solution. Increments are regressed on the time-n basis
// (1, X_n, R_n); reports coefficient t-statistics and the mean increment.
// The negative control shifts Y by `y_offset` from step `y_offset_start`
// onward; a constant shift over the whole horizon would only rescale M
// and stay invisible, so the offset is injected mid-path.
struct MartingaleProbe {
  double t = 0.0;
  double mean_inc = 0.0, se_inc = 0.0;
  double coef[3] = {0, 0, 0};
  double tstat[3] = {0, 0, 0};
};

struct MartingaleReport {
  std::vector<MartingaleProbe> probes;
  double max_abs_tstat() const {
    double m = 0;
    for (const auto& p : probes)
      for (double t : p.tstat) m = std::max(m, std::fabs(t));
    return m;
  }
  double max_abs_mean_z() const {
    double m = 0;
    for (const auto& p : probes)
      if (p.se_inc > 0) m = std::max(m, std::fabs(p.mean_inc / p.se_inc));
    return m;
  }
};

inline MartingaleReport martingale_residual(StrategyProcess& strat,
                                            const MarketParams& mp,
                                            const FactorParams& fp,
                                            const TimeGrid& grid, int batch,
                                            std::uint64_t seed,
                                            std::uint32_t stream = 0,
                                            int n_probes = 5,
                                            double y_offset = 0.0,
                                            int y_offset_start = -1) {
  PathBatch pb = make_path_batch(grid, mp, fp, batch, seed, stream,
                                 rng::Purpose::kEvalNoise);
  HorizonRollout hr = roll_horizon(strat, mp, fp, grid, pb);
  if (y_offset != 0.0) {
    const int start = y_offset_start >= 0 ? y_offset_start : grid.N / 2;
    for (int p = 0; p < batch; ++p)
      for (int n = start; n <= grid.N; ++n)
        hr.Y[static_cast<std::size_t>(p) * (grid.N + 1) + n] += y_offset;
  }

  MartingaleReport rep;
  for (int probe = 0; probe < n_probes; ++probe) {
    const int n = probe * grid.N / n_probes;
    MartingaleProbe pr;
    pr.t = grid.t(n);
    // Regress dM on (1, X_n, R_n).
    std::vector<double> dm(batch);
    double xtx[3][3] = {};
    double xty[3] = {};
    for (int p = 0; p < batch; ++p) {
      const double m0 = std::exp(-mp.zeta * (hr.r(p, n) + hr.y(p, n)));
      const double m1 = std::exp(-mp.zeta * (hr.r(p, n + 1) + hr.y(p, n + 1)));
      dm[p] = m1 - m0;
      const double reg[3] = {1.0, pb.x(p, n), hr.r(p, n)};
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) xtx[i][j] += reg[i] * reg[j];
        xty[i] += reg[i] * dm[p];
      }
    }
    double mean = 0;
    for (double v : dm) mean += v;
    mean /= batch;
    double var = 0;
    for (double v : dm) var += (v - mean) * (v - mean);
    var /= (batch - 1);
    pr.mean_inc = mean;
    pr.se_inc = std::sqrt(var / batch);

    // Solve the 3x3 normal equations by Gaussian elimination with a
    // ridge fallback for degenerate designs.
    double a[3][4];
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) a[i][j] = xtx[i][j];
      a[i][i] += 1e-12 * (1.0 + xtx[i][i]);
      a[i][3] = xty[i];
    }
    for (int c = 0; c < 3; ++c) {
      int piv = c;
      for (int r2 = c + 1; r2 < 3; ++r2)
        if (std::fabs(a[r2][c]) > std::fabs(a[piv][c])) piv = r2;
      std::swap(a[c], a[piv]);
      for (int r2 = 0; r2 < 3; ++r2) {
        if (r2 == c) continue;
        const double w = a[r2][c] / a[c][c];
        for (int j = c; j < 4; ++j) a[r2][j] -= w * a[c][j];
      }
    }
    double inv_diag[3];
    for (int i = 0; i < 3; ++i) {
      pr.coef[i] = a[i][3] / a[i][i];
      inv_diag[i] = 1.0 / a[i][i];
    }
    double rss = 0;
    for (int p = 0; p < batch; ++p) {
      const double reg[3] = {1.0, pb.x(p, n), hr.r(p, n)};
      double fit = 0;
      for (int i = 0; i < 3; ++i) fit += pr.coef[i] * reg[i];
      rss += (dm[p] - fit) * (dm[p] - fit);
    }
    const double s2 = rss / (batch - 3);
    for (int i = 0; i < 3; ++i) {
      const double se = std::sqrt(std::max(0.0, s2 * inv_diag[i]));
      pr.tstat[i] = se > 1e-300 ? pr.coef[i] / se : 0.0;
    }
    rep.probes.push_back(pr);
  }
  return rep;
}

}  // namespace tceq
