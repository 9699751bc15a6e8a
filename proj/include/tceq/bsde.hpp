#pragma once

// Deep-BSDE solver: trainable initial values (Y0, Z0[, Ytilde0, Ztilde0])
// and one small network per interior time step mapping the factor value
// to Z (and Ztilde for the coupled regime). Training rolls the Euler
// recursion forward through all steps with the regime's strategy formula
// coupled in, and minimizes the mean squared terminal residual.

#include <chrono>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tceq/adam.hpp"
#include "tceq/autodiff.hpp"
#include "tceq/market.hpp"
#include "tceq/nn.hpp"
#include "tceq/paths.hpp"
#include "tceq/strategy.hpp"

namespace tceq {

struct LrStage {
  double start = 0.0;
  double end = 0.0;
};

struct TrainConfig {
  int epochs = 5000;
  int batch = 512;
  // Four-stage linear decay; stage lengths are fractions of the epoch
  // budget (equal quarters unless configured otherwise).
  std::vector<LrStage> lr_stages = {
      {8e-4, 5e-4}, {5e-4, 2e-4}, {2e-4, 5e-5}, {5e-5, 1e-5}};
  std::vector<double> stage_fracs = {0.25, 0.25, 0.25, 0.25};
  nn::AdamConfig adam;
  std::vector<int> hidden = {11, 11};
  double bn_eps = 1e-5;
  double bn_momentum = 0.9;
  std::uint64_t seed = 1;
  bool fresh_paths = true;  // resample the mini-batch every epoch

  double lr(int epoch) const {
    if (lr_stages.empty()) throw std::invalid_argument("train.lr_stages: empty");
    if (lr_stages.size() != stage_fracs.size())
      throw std::invalid_argument("train.lr_stages: stage/fraction count mismatch");
    double cum = 0.0;
    int begin = 0;
    for (std::size_t s = 0; s < lr_stages.size(); ++s) {
      cum += stage_fracs[s];
      const int end = (s + 1 == lr_stages.size())
                          ? epochs
                          : static_cast<int>(cum * epochs + 0.5);
      if (epoch < end || s + 1 == lr_stages.size()) {
        const int len = std::max(1, end - begin);
        const double frac =
            std::min(1.0, static_cast<double>(epoch - begin) / static_cast<double>(len));
        return lr_stages[s].start + (lr_stages[s].end - lr_stages[s].start) * frac;
      }
      begin = end;
    }
    return lr_stages.back().end;
  }

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train.epochs: must be >= 1");
    if (batch < 2) throw std::invalid_argument("train.batch: must be >= 2");
    double prev = lr_stages.front().start;
    for (const auto& st : lr_stages) {
      if (st.start > prev + 1e-15)
        throw std::invalid_argument("train.lr_stages: learning rate must be non-increasing");
      if (st.end > st.start + 1e-15)
        throw std::invalid_argument("train.lr_stages: stages must decay");
      prev = st.end;
    }
  }
};

struct TrainTrace {
  std::vector<double> loss;      // per epoch
  std::vector<double> lr;        // per epoch
  std::vector<double> epoch_ms;  // wall clock per epoch
  double final_y0 = 0.0, final_z0 = 0.0;
  double final_ytilde0 = 0.0, final_ztilde0 = 0.0;

  double smoothed_final_loss(int window = 100) const {
    if (loss.empty()) return 0.0;
    const int n = static_cast<int>(loss.size());
    const int w = std::min(window, n);
    double s = 0.0;
    for (int i = n - w; i < n; ++i) s += loss[i];
    return s / w;
  }
};

struct NonFiniteError : std::runtime_error {
  int step;
  explicit NonFiniteError(int step_)
      : std::runtime_error("non-finite value in BSDE rollout at step " +
                           std::to_string(step_)),
        step(step_) {}
};

struct TrainAbortError : std::runtime_error {
  TrainTrace trace;
  TrainAbortError(const std::string& what_, TrainTrace trace_)
      : std::runtime_error(what_), trace(std::move(trace_)) {}
};

// Batched stateful strategy over a path batch: step() returns the
// amount-volatility u_n for each path and advances internal state.
class StrategyProcess {
 public:
  virtual ~StrategyProcess() = default;
  virtual void reset(int batch) = 0;
  virtual void step(int n, const double* xn, const double* dbbar, double* u_out) = 0;
  // Current Y per path (empty if the strategy has no Y state).
  virtual const std::vector<double>& y_state() const { return empty_; }
  virtual void set_y_state(const std::vector<double>& y,
                           const std::vector<double>& ytilde) {
    (void)y;
    (void)ytilde;
    throw std::logic_error("strategy has no settable state");
  }
  virtual const std::vector<double>& ytilde_state() const { return empty_; }

 private:
  std::vector<double> empty_;
};

class BsdeSolver {
 public:
  BsdeSolver(StrategyRegime regime, MarketParams mp, FactorParams fp,
             TimeGrid grid, TrainConfig tc)
      : regime_(regime), mp_(mp), fp_(fp), grid_(grid), tc_(tc) {
    regime_.validate();
    mp_.validate();
    fp_.validate();
    grid_.validate();
    tc_.validate();
    if (regime_.tag == RegimeTag::kBenchmark ||
        regime_.tag == RegimeTag::kCompleteMarket)
      throw std::invalid_argument("BsdeSolver: regime has no trainable solver");
    if (regime_.tag == RegimeTag::kRhoZero && mp_.rho != 0.0)
      throw std::invalid_argument("BsdeSolver: RhoZero regime requires market.rho = 0");
    coupled_ = regime_.tag == RegimeTag::kConstrained;

    y0_ = store_.add("y0", ad::Tensor::scalar(0.0));
    z0_ = store_.add("z0", ad::Tensor::scalar(0.0));
    if (coupled_) {
      yt0_ = store_.add("ytilde0", ad::Tensor::scalar(0.0));
      zt0_ = store_.add("ztilde0", ad::Tensor::scalar(0.0));
    }
    nn::MlpSpec spec;
    spec.in_dim = 1;
    spec.hidden = tc_.hidden;
    spec.out_dim = coupled_ ? 2 : 1;
    spec.bn_eps = tc_.bn_eps;
    spec.bn_momentum = tc_.bn_momentum;
    nets_.resize(std::max(0, grid_.N - 1));
    for (int k = 0; k < static_cast<int>(nets_.size()); ++k)
      nets_[k].init(store_, spec, tc_.seed, static_cast<std::uint32_t>(k + 1));
  }

  const StrategyRegime& regime() const { return regime_; }
  const MarketParams& market() const { return mp_; }
  const FactorParams& factor() const { return fp_; }
  const TimeGrid& grid() const { return grid_; }
  const TrainConfig& train_config() const { return tc_; }
  bool coupled() const { return coupled_; }
  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }
  std::vector<nn::Mlp>& nets() { return nets_; }
  const std::vector<nn::Mlp>& nets() const { return nets_; }

  double y0() const { return store_.values[y0_].v[0]; }
  double z0() const { return store_.values[z0_].v[0]; }
  double ytilde0() const { return coupled_ ? store_.values[yt0_].v[0] : 0.0; }
  double ztilde0() const { return coupled_ ? store_.values[zt0_].v[0] : 0.0; }
  void set_y0(double v) { store_.values[y0_].v[0] = v; }
  void set_z0(double v) { store_.values[z0_].v[0] = v; }
  void set_ytilde0(double v) { if (coupled_) store_.values[yt0_].v[0] = v; }
  void set_ztilde0(double v) { if (coupled_) store_.values[zt0_].v[0] = v; }

  // Unrolls the Euler recursion on the tape and returns the scalar loss
  // node. Throws NonFiniteError with the offending step index.
  ad::Var build_loss(ad::Tape& tape, const PathBatch& pb, bool train,
                     bool update_stats) {
    if (pb.steps != grid_.N)
      throw std::invalid_argument("build_loss: path batch step count differs from grid");
    const int b = pb.batch;
    const int N = grid_.N;
    const double dt = grid_.dt();
    const double rho = mp_.rho, zeta = mp_.zeta, gamma = mp_.gamma;

    ad::Var y = tape.param(store_.values[y0_], &store_.grads[y0_]);
    ad::Var z0v = tape.param(store_.values[z0_], &store_.grads[z0_]);
    ad::Var yt, zt0v;
    if (coupled_) {
      yt = tape.param(store_.values[yt0_], &store_.grads[yt0_]);
      zt0v = tape.param(store_.values[zt0_], &store_.grads[zt0_]);
    }

    for (int n = 0; n < N; ++n) {
      ad::Tensor th(b, 1), db(b, 1);
      for (int p = 0; p < b; ++p) {
        th.v[p] = theta(pb.x(p, n), fp_.trunc);
        db.v[p] = pb.dbbar(p, n);
      }
      ad::Var th_v = tape.input(std::move(th));
      ad::Var db_v = tape.input(std::move(db));

      ad::Var z, ztilde;
      if (n == 0) {
        z = z0v;
        if (coupled_) ztilde = zt0v;
      } else {
        ad::Tensor xn(b, 1);
        for (int p = 0; p < b; ++p) xn.v[p] = pb.x(p, n);
        ad::Var out = nets_[n - 1].forward(tape, store_, tape.input(std::move(xn)),
                                           train, update_stats);
        if (coupled_) {
          z = tape.col(out, 0);
          ztilde = tape.col(out, 1);
        } else {
          z = out;
        }
      }

      ad::Var e = tape.exp(tape.scale(y, -zeta));
      ad::Var den = tape.add_const(tape.scale(e, zeta + 1.0), gamma);
      ad::Var u;
      if (regime_.tag == RegimeTag::kConstrained) {
        ad::Var num = tape.sub(
            tape.sub(tape.mul(e, th_v), tape.scale(tape.mul(e, z), zeta * rho)),
            tape.scale(ztilde, gamma * rho));
        const Constraint& c = *regime_.constraint;
        u = tape.clamp(tape.div(num, den), mp_.sigma * c.lo, mp_.sigma * c.hi);
      } else {
        u = tape.div(tape.mul(e, th_v), den);
      }

      // a(u) = r + theta u - u^2/2
      ad::Var a = tape.add_const(
          tape.sub(tape.mul(th_v, u), tape.scale(tape.square(u), 0.5)), mp_.r);
      // G = zeta/2 (rho Z + u)^2 + zeta(1-rho^2)/2 Z^2 - a
      ad::Var mix = tape.add(tape.scale(z, rho), u);
      ad::Var gy = tape.sub(
          tape.add(tape.scale(tape.square(mix), 0.5 * zeta),
                   tape.scale(tape.square(z), 0.5 * zeta * (1.0 - rho * rho))),
          a);
      y = tape.add(y, tape.add(tape.scale(gy, dt), tape.mul(z, db_v)));
      if (coupled_)
        yt = tape.add(yt, tape.add(tape.scale(tape.scale(a, -1.0), dt),
                                   tape.mul(ztilde, db_v)));
      if (!tape.value(y).all_finite() ||
          (coupled_ && !tape.value(yt).all_finite()))
        throw NonFiniteError(n);
    }

    ad::Var loss = tape.mean_sq(y);
    if (coupled_) loss = tape.add(loss, tape.mean_sq(yt));
    return loss;
  }

  // Forward + reverse pass; gradients accumulate into the store.
  double backprop_loss(const PathBatch& pb, bool update_stats = false) {
    ad::Tape tape;
    store_.zero_grads();
    ad::Var loss = build_loss(tape, pb, /*train=*/true, update_stats);
    tape.backward(loss);
    return tape.value(loss).v[0];
  }

  // Forward only; used by the finite-difference oracle.
  double loss_value(const PathBatch& pb) {
    ad::Tape tape;
    ad::Var loss = build_loss(tape, pb, /*train=*/true, /*update_stats=*/false);
    return tape.value(loss).v[0];
  }

  TrainTrace train(const std::function<void(int, double)>& on_epoch = {}) {
    nn::Adam adam(store_, tc_.adam);
    TrainTrace trace;
    trace.loss.reserve(tc_.epochs);
    PathBatch cached;
    if (!tc_.fresh_paths)
      cached = make_path_batch(grid_, mp_, fp_, tc_.batch, tc_.seed, 0);
    for (int epoch = 0; epoch < tc_.epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      const PathBatch& pb =
          tc_.fresh_paths
              ? (cached = make_path_batch(grid_, mp_, fp_, tc_.batch, tc_.seed,
                                          static_cast<std::uint32_t>(epoch)))
              : cached;
      double loss;
      try {
        loss = backprop_loss(pb, /*update_stats=*/true);
      } catch (const NonFiniteError& e) {
        finalize_trace(trace);
        throw TrainAbortError(std::string("training aborted: ") + e.what(), trace);
      }
      if (!std::isfinite(loss)) {
        finalize_trace(trace);
        throw TrainAbortError("training aborted: loss is not finite", trace);
      }
      const double lr = tc_.lr(epoch);
      adam.step(store_, lr);
      trace.loss.push_back(loss);
      trace.lr.push_back(lr);
      trace.epoch_ms.push_back(
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                    t0)
              .count());
      if (on_epoch) on_epoch(epoch, loss);
    }
    finalize_trace(trace);
    return trace;
  }

 private:
  void finalize_trace(TrainTrace& trace) const {
    trace.final_y0 = y0();
    trace.final_z0 = z0();
    trace.final_ytilde0 = ytilde0();
    trace.final_ztilde0 = ztilde0();
  }

  StrategyRegime regime_;
  MarketParams mp_;
  FactorParams fp_;
  TimeGrid grid_;
  TrainConfig tc_;
  bool coupled_ = false;
  nn::ParamStore store_;
  int y0_ = -1, z0_ = -1, yt0_ = -1, zt0_ = -1;
  std::vector<nn::Mlp> nets_;
};

// Deterministic batched replay of a trained solver. Networks run in eval
// mode (running statistics) unless batch_stats is set.
class NeuralStrategy : public StrategyProcess {
 public:
  explicit NeuralStrategy(const BsdeSolver& solver, bool batch_stats = false)
      : s_(solver), batch_stats_(batch_stats) {}

  void reset(int batch) override {
    batch_ = batch;
    y_.assign(batch, s_.y0());
    yt_.assign(batch, s_.ytilde0());
    z_.assign(batch, 0.0);
    zt_.assign(batch, 0.0);
    net_out_.assign(static_cast<std::size_t>(batch) * (s_.coupled() ? 2 : 1), 0.0);
  }

  void set_y_state(const std::vector<double>& y,
                   const std::vector<double>& ytilde) override {
    if (static_cast<int>(y.size()) != batch_)
      throw std::invalid_argument("set_y_state: batch mismatch");
    y_ = y;
    if (!ytilde.empty()) yt_ = ytilde;
  }

  void step(int n, const double* xn, const double* dbbar, double* u_out) override {
    const MarketParams& mp = s_.market();
    const double dt = s_.grid().dt();
    if (n == 0) {
      std::fill(z_.begin(), z_.end(), s_.z0());
      std::fill(zt_.begin(), zt_.end(), s_.ztilde0());
    } else {
      const nn::Mlp& net = s_.nets()[n - 1];
      net.eval(s_.store(), xn, batch_, net_out_.data(), batch_stats_);
      if (s_.coupled()) {
        for (int p = 0; p < batch_; ++p) {
          z_[p] = net_out_[2 * static_cast<std::size_t>(p)];
          zt_[p] = net_out_[2 * static_cast<std::size_t>(p) + 1];
        }
      } else {
        std::copy(net_out_.begin(), net_out_.end(), z_.begin());
      }
    }
    for (int p = 0; p < batch_; ++p) {
      const double th = theta(xn[p], s_.factor().trunc);
      double u;
      if (s_.regime().tag == RegimeTag::kConstrained) {
        const double w = u_hat_general(y_[p], z_[p], zt_[p], th, mp);
        u = project_interval(w, *s_.regime().constraint, mp.sigma);
      } else {
        u = u_hat_rho0(y_[p], th, mp);
      }
      u_out[p] = u;
      const double gy = generator_y(u, z_[p], th, mp);
      y_[p] = euler_step_y(y_[p], z_[p], gy, dt, dbbar[p]);
      if (s_.coupled()) {
        const double gyt = generator_ytilde(u, th, mp);
        yt_[p] = euler_step_y(yt_[p], zt_[p], gyt, dt, dbbar[p]);
      }
    }
  }

  const std::vector<double>& y_state() const override { return y_; }
  const std::vector<double>& ytilde_state() const override { return yt_; }
  const std::vector<double>& z_values() const { return z_; }
  const std::vector<double>& ztilde_values() const { return zt_; }

 private:
  const BsdeSolver& s_;
  bool batch_stats_;
  int batch_ = 0;
  std::vector<double> y_, yt_, z_, zt_, net_out_;
};

// Utility-only benchmark: u = theta(x) / (zeta + 1), the gamma = 0 strategy.
class BenchmarkStrategy : public StrategyProcess {
 public:
  BenchmarkStrategy(const MarketParams& mp, const FactorParams& fp)
      : mp_(mp), fp_(fp) {}
  void reset(int batch) override { batch_ = batch; }
  void step(int, const double* xn, const double*, double* u_out) override {
    for (int p = 0; p < batch_; ++p)
      u_out[p] = theta(xn[p], fp_.trunc) / (mp_.zeta + 1.0);
  }

 private:
  MarketParams mp_;
  FactorParams fp_;
  int batch_ = 0;
};

struct ReplayResult {
  int batch = 0;
  int steps = 0;
  std::vector<double> Y;       // batch x (N+1)
  std::vector<double> Ytilde;  // batch x (N+1), zero unless coupled
  std::vector<double> Z;       // batch x N
  std::vector<double> u;       // batch x N
  std::vector<double> pi;      // batch x N

  double y(int p, int n) const { return Y[static_cast<std::size_t>(p) * (steps + 1) + n]; }
  double z(int p, int n) const { return Z[static_cast<std::size_t>(p) * steps + n]; }
  double strat_u(int p, int n) const { return u[static_cast<std::size_t>(p) * steps + n]; }
  double strat_pi(int p, int n) const { return pi[static_cast<std::size_t>(p) * steps + n]; }
};

// Rolls a trained solver along the given paths and records per-step
// (Y, Z, u, pi) arrays for plotting and evaluation.
inline ReplayResult replay_strategy(const BsdeSolver& solver, const PathBatch& pb,
                                    bool batch_stats = false) {
  const int b = pb.batch, N = pb.steps;
  ReplayResult r;
  r.batch = b;
  r.steps = N;
  r.Y.assign(static_cast<std::size_t>(b) * (N + 1), 0.0);
  r.Ytilde.assign(static_cast<std::size_t>(b) * (N + 1), 0.0);
  r.Z.assign(static_cast<std::size_t>(b) * N, 0.0);
  r.u.assign(static_cast<std::size_t>(b) * N, 0.0);
  r.pi.assign(static_cast<std::size_t>(b) * N, 0.0);

  NeuralStrategy strat(solver, batch_stats);
  strat.reset(b);
  std::vector<double> xn(b), db(b), u(b);
  for (int p = 0; p < b; ++p) {
    r.Y[static_cast<std::size_t>(p) * (N + 1)] = solver.y0();
    r.Ytilde[static_cast<std::size_t>(p) * (N + 1)] = solver.ytilde0();
  }
  for (int n = 0; n < N; ++n) {
    for (int p = 0; p < b; ++p) {
      xn[p] = pb.x(p, n);
      db[p] = pb.dbbar(p, n);
    }
    strat.step(n, xn.data(), db.data(), u.data());
    for (int p = 0; p < b; ++p) {
      r.Z[static_cast<std::size_t>(p) * N + n] = strat.z_values()[p];
      r.u[static_cast<std::size_t>(p) * N + n] = u[p];
      r.pi[static_cast<std::size_t>(p) * N + n] = u[p] / solver.market().sigma;
      r.Y[static_cast<std::size_t>(p) * (N + 1) + n + 1] = strat.y_state()[p];
      r.Ytilde[static_cast<std::size_t>(p) * (N + 1) + n + 1] =
          strat.ytilde_state().empty() ? 0.0 : strat.ytilde_state()[p];
    }
  }
  return r;
}

// Central finite-difference check of every trainable scalar.
struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t skipped = 0;  // both gradients below the magnitude floor
  std::size_t failed = 0;
  double max_rel_err = 0.0;
  std::string worst;
};

inline GradCheckResult gradient_check(BsdeSolver& solver, const PathBatch& pb,
                                      double h = 1e-5, double rtol = 1e-4,
                                      double min_mag = 1e-6) {
  nn::ParamStore& store = solver.store();
  solver.backprop_loss(pb, /*update_stats=*/false);
  const std::size_t n = store.scalar_count();
  std::vector<double> analytic(n);
  for (std::size_t i = 0; i < n; ++i) analytic[i] = store.grad_scalar(i);

  GradCheckResult res;
  for (std::size_t i = 0; i < n; ++i) {
    const double x0 = store.get_scalar(i);
    store.set_scalar(i, x0 + h);
    const double lp = solver.loss_value(pb);
    store.set_scalar(i, x0 - h);
    const double lm = solver.loss_value(pb);
    store.set_scalar(i, x0);
    const double fd = (lp - lm) / (2.0 * h);
    const double mag = std::max(std::fabs(fd), std::fabs(analytic[i]));
    if (mag <= min_mag) {
      ++res.skipped;
      continue;
    }
    ++res.checked;
    const double rel = std::fabs(fd - analytic[i]) / mag;
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst = store.scalar_name(i);
    }
    if (rel > rtol) ++res.failed;
  }
  return res;
}

}  // namespace tceq
