// Experiment driver: training, replay, oracles, and the comparison
// studies, all configured by a flat key-value file plus --set overrides.
// Every run writes its resolved configuration and a JSON report next to
// the CSV payloads; payload bytes depend only on (config, seed).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tceq/checkpoint.hpp"
#include "tceq/config.hpp"
#include "tceq/evaluate.hpp"
#include "tceq/fk.hpp"
#include "tceq/io.hpp"
#include "tceq/ode.hpp"
#include "tceq/pde.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tceq;

namespace {

struct RunContext {
  ExperimentConfig cfg;
  fs::path out;
  std::string subcommand;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  json metrics;
  std::vector<std::string> artifacts;

  void emit(const std::string& name, const io::Csv& csv) {
    csv.write(out / name);
    artifacts.push_back(name);
  }

  void finish() {
    io::atomic_write(out / "resolved.cfg", cfg.resolved_text());
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016llx",
                  static_cast<unsigned long long>(cfg.hash()));
    json rep;
    rep["subcommand"] = subcommand;
    rep["config_hash"] = hash;
    rep["artifacts"] = artifacts;
    rep["metrics"] = metrics;
    rep["wall_clock_sec"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    io::atomic_write(out / "report.json", rep.dump(1) + "\n");
  }
};

TrainTrace train_with_progress(BsdeSolver& solver, const std::string& label) {
  const int total = solver.train_config().epochs;
  std::fprintf(stderr, "[%s] training %d epochs...\n", label.c_str(), total);
  return solver.train([&](int epoch, double loss) {
    if ((epoch + 1) % 1000 == 0 || epoch + 1 == total)
      std::fprintf(stderr, "[%s] epoch %d/%d loss %.3e\n", label.c_str(), epoch + 1,
                   total, loss);
  });
}

BsdeSolver build_solver(const ExperimentConfig& cfg) {
  return BsdeSolver(cfg.regime, cfg.market, cfg.factor, cfg.grid, cfg.train);
}

void write_loss_csv(RunContext& ctx, const TrainTrace& trace) {
  io::Csv csv({"epoch", "loss", "lr"});
  for (std::size_t e = 0; e < trace.loss.size(); ++e)
    csv.row({static_cast<double>(e), trace.loss[e], trace.lr[e]});
  ctx.emit("loss.csv", csv);
}

int cmd_train(RunContext& ctx) {
  BsdeSolver solver = build_solver(ctx.cfg);
  const TrainTrace trace = train_with_progress(solver, "train");
  save_checkpoint(solver, ctx.out / "checkpoint.json");
  ctx.artifacts.push_back("checkpoint.json");
  write_loss_csv(ctx, trace);
  ctx.metrics["final_loss"] = trace.loss.back();
  ctx.metrics["smoothed_loss_100"] = trace.smoothed_final_loss();
  ctx.metrics["y0"] = trace.final_y0;
  ctx.metrics["z0"] = trace.final_z0;
  if (solver.coupled()) {
    ctx.metrics["ytilde0"] = trace.final_ytilde0;
    ctx.metrics["ztilde0"] = trace.final_ztilde0;
  }
  double total_ms = 0;
  for (double ms : trace.epoch_ms) total_ms += ms;
  ctx.metrics["train_sec"] = total_ms / 1000.0;
  return 0;
}

int cmd_replay(RunContext& ctx, const fs::path& ckpt) {
  BsdeSolver solver = load_checkpoint(ckpt);
  const TimeGrid& grid = solver.grid();
  PathBatch pb = make_path_batch(grid, solver.market(), solver.factor(),
                                 ctx.cfg.eval.replay_batch, ctx.cfg.seed, 0,
                                 rng::Purpose::kEvalNoise);
  const ReplayResult r = replay_strategy(solver, pb, ctx.cfg.eval.batch_stats);

  io::Csv traj({"path_id", "t", "X", "Y", "pi"});
  const int shown = std::min(5, pb.batch);
  for (int p = 0; p < shown; ++p)
    for (int n = 0; n < grid.N; ++n)
      traj.row({static_cast<double>(p), grid.t(n), pb.x(p, n), r.y(p, n),
                r.strat_pi(p, n)});
  ctx.emit("trajectory.csv", traj);

  io::Csv mean({"t", "mean_X", "mean_Y", "mean_pi"});
  double terminal_msq = 0.0;
  for (int n = 0; n <= grid.N; ++n) {
    double mx = 0, my = 0, mpi = 0;
    for (int p = 0; p < pb.batch; ++p) {
      mx += pb.x(p, n);
      my += r.y(p, n);
      if (n < grid.N) mpi += r.strat_pi(p, n);
    }
    mean.row({grid.t(n), mx / pb.batch, my / pb.batch,
              n < grid.N ? mpi / pb.batch : 0.0});
  }
  for (int p = 0; p < pb.batch; ++p)
    terminal_msq += r.y(p, grid.N) * r.y(p, grid.N);
  ctx.emit("replay_mean.csv", mean);
  ctx.metrics["terminal_msq"] = terminal_msq / pb.batch;
  return 0;
}

int cmd_sweep(RunContext& ctx) {
  std::vector<BsdeSolver> solvers;
  solvers.reserve(ctx.cfg.sweep_values.size());
  for (std::size_t i = 0; i < ctx.cfg.sweep_values.size(); ++i) {
    ExperimentConfig cfg = ctx.cfg;
    if (cfg.sweep_param == "gamma")
      cfg.market.gamma = cfg.sweep_values[i];
    else
      cfg.market.zeta = cfg.sweep_values[i];
    cfg.train.seed = cfg.seed ^ static_cast<std::uint64_t>(i);
    solvers.push_back(build_solver(cfg));
    train_with_progress(solvers.back(),
                        cfg.sweep_param + "=" + io::num(cfg.sweep_values[i]));
  }
  std::vector<const BsdeSolver*> ptrs;
  for (const auto& s : solvers) ptrs.push_back(&s);
  const auto rows = sensitivity_replay(ptrs, ctx.cfg.sweep_values,
                                       ctx.cfg.eval.replay_batch, ctx.cfg.seed);

  io::Csv csv({"param", "value", "t", "mean_pi"});
  for (const auto& row : rows)
    for (std::size_t n = 0; n < row.mean_pi.size(); ++n)
      csv.raw_row({ctx.cfg.sweep_param, io::num(row.value),
                   io::num(ctx.cfg.grid.t(static_cast<int>(n))),
                   io::num(row.mean_pi[n])});
  ctx.emit("sweep.csv", csv);

  io::Csv summary({"value", "time_avg_mean_pi"});
  json avgs = json::array();
  for (const auto& row : rows) {
    summary.row({row.value, row.time_avg_mean_pi});
    avgs.push_back(row.time_avg_mean_pi);
  }
  ctx.emit("sweep_summary.csv", summary);
  ctx.metrics["time_avg_mean_pi"] = avgs;
  return 0;
}

int cmd_compare_variance(RunContext& ctx, const fs::path& ckpt) {
  BsdeSolver solver = load_checkpoint(ckpt);
  NeuralStrategy eq(solver, ctx.cfg.eval.batch_stats);
  BenchmarkStrategy bench(solver.market(), solver.factor());
  const auto rows = variance_utility_comparison(eq, bench, solver.market(),
                                                solver.factor(), solver.grid(),
                                                ctx.cfg.eval.replay_batch,
                                                ctx.cfg.seed);
  io::Csv csv({"t", "var_eq", "var_bench", "var_diff_se", "util_eq", "util_bench",
               "util_diff_se"});
  double max_var_excess = -1e300, max_util_deficit = -1e300;
  for (const auto& row : rows) {
    csv.row({row.t, row.var_a, row.var_b, row.var_diff_se, row.util_a, row.util_b,
             row.util_diff_se});
    max_var_excess = std::max(max_var_excess, row.var_a - row.var_b);
    max_util_deficit = std::max(max_util_deficit, row.util_b - row.util_a);
  }
  ctx.emit("variance_utility.csv", csv);
  ctx.metrics["max_var_excess"] = max_var_excess;
  ctx.metrics["max_util_deficit"] = max_util_deficit;
  return 0;
}

int cmd_compare_rho(RunContext& ctx) {
  io::Csv csv({"rho", "t", "mean_pi", "mean_X"});
  json summary = json::array();

  auto replay_mean = [&](const BsdeSolver& solver, double rho_label) {
    PathBatch pb = make_path_batch(solver.grid(), solver.market(), solver.factor(),
                                   ctx.cfg.eval.replay_batch, ctx.cfg.seed, 0,
                                   rng::Purpose::kEvalNoise);
    const ReplayResult r = replay_strategy(solver, pb, ctx.cfg.eval.batch_stats);
    double avg = 0;
    for (int n = 0; n < solver.grid().N; ++n) {
      double mpi = 0, mx = 0;
      for (int p = 0; p < pb.batch; ++p) {
        mpi += r.strat_pi(p, n);
        mx += pb.x(p, n);
      }
      csv.row({rho_label, solver.grid().t(n), mpi / pb.batch, mx / pb.batch});
      avg += mpi / pb.batch;
    }
    summary.push_back({{"rho", rho_label}, {"time_avg_mean_pi", avg / solver.grid().N}});
  };

  {
    ExperimentConfig cfg = ctx.cfg;
    cfg.market.rho = 0.0;
    cfg.regime = StrategyRegime{RegimeTag::kRhoZero, {}};
    BsdeSolver base = build_solver(cfg);
    train_with_progress(base, "rho=0");
    replay_mean(base, 0.0);
  }
  std::size_t idx = 0;
  for (double rho : ctx.cfg.compare_rho_values) {
    ExperimentConfig cfg = ctx.cfg;
    cfg.market.rho = rho;
    cfg.regime = StrategyRegime{RegimeTag::kConstrained,
                                Constraint{-10000.0, 10000.0}};
    cfg.train.seed = cfg.seed ^ static_cast<std::uint64_t>(++idx);
    BsdeSolver solver = build_solver(cfg);
    train_with_progress(solver, "rho=" + io::num(rho));
    replay_mean(solver, rho);
  }
  ctx.emit("compare_rho.csv", csv);
  ctx.metrics["series"] = summary;
  return 0;
}

int cmd_table1(RunContext& ctx) {
  ExperimentConfig approx_cfg = ctx.cfg;
  approx_cfg.regime = StrategyRegime{RegimeTag::kApproximate, {}};
  BsdeSolver approx = build_solver(approx_cfg);
  train_with_progress(approx, "approximate");

  ExperimentConfig constr_cfg = ctx.cfg;
  Constraint box = ctx.cfg.regime.constraint.value_or(Constraint{-10000.0, 10000.0});
  constr_cfg.regime = StrategyRegime{RegimeTag::kConstrained, box};
  BsdeSolver constr = build_solver(constr_cfg);
  train_with_progress(constr, "constrained");

  const auto rows = table1_comparison(approx, constr, ctx.cfg.table1_times,
                                      ctx.cfg.eval.replay_batch, ctx.cfg.seed);
  io::Csv csv({"t", "pi_approx", "pi_constr", "rel_pi_permille", "val_approx",
               "val_constr", "rel_val_permille"});
  double max_val_rel = 0;
  for (const auto& row : rows) {
    csv.row({row.t, row.pi_approx, row.pi_constr, row.rel_pi_permille,
             row.val_approx, row.val_constr, row.rel_val_permille});
    max_val_rel = std::max(max_val_rel, std::fabs(row.rel_val_permille));
  }
  ctx.emit("table1.csv", csv);
  ctx.metrics["max_val_rel_permille"] = max_val_rel;
  save_checkpoint(approx, ctx.out / "checkpoint_approximate.json");
  save_checkpoint(constr, ctx.out / "checkpoint_constrained.json");
  ctx.artifacts.push_back("checkpoint_approximate.json");
  ctx.artifacts.push_back("checkpoint_constrained.json");
  return 0;
}

int cmd_oracle_ode(RunContext& ctx) {
  const TimeGrid ogrid{ctx.cfg.grid.T, ctx.cfg.ode.N};
  const CompleteOdeSolution sol =
      solve_complete_ode(ctx.cfg.market, ctx.cfg.ode.theta_const, ogrid);
  io::Csv csv({"t", "A", "pi_hat"});
  for (std::size_t n = 0; n < sol.t.size(); ++n)
    csv.row({sol.t[n], sol.A[n], sol.pi_hat[n]});
  ctx.emit("ode.csv", csv);
  ctx.metrics["A0"] = sol.a0();
  return 0;
}

PdeSolution solve_pde_pair(const ExperimentConfig& cfg) {
  PdeSolution sol = solve_pde_f(cfg.market, cfg.factor, cfg.pde_grid(), cfg.grid,
                                cfg.market.rho, cfg.pde.terminal_one ? 1.0 : 0.0,
                                cfg.pde.boundary_tol);
  solve_pde_g(cfg.market, cfg.factor, sol);
  return sol;
}

int cmd_oracle_pde(RunContext& ctx) {
  const PdeSolution sol = solve_pde_pair(ctx.cfg);
  const int stride = sol.grid.Nt / ctx.cfg.grid.N;
  io::Csv csv({"t", "x", "f", "fx", "g", "gx"});
  for (int k = 0; k <= sol.grid.Nt; k += stride)
    for (int i = 0; i <= sol.grid.M; ++i)
      csv.row({ctx.cfg.grid.T * k / sol.grid.Nt, sol.grid.x(i), sol.at(sol.f, k, i),
               sol.at(sol.fx, k, i), sol.at(sol.g, k, i), sol.at(sol.gx, k, i)});
  ctx.emit("pde.csv", csv);
  ctx.metrics["max_abs_f"] = pde_max_abs(sol, sol.f);
  ctx.metrics["max_boundary_slope"] = sol.max_boundary_slope;
  return 0;
}

int cmd_fk_check(RunContext& ctx, const fs::path& ckpt) {
  BsdeSolver solver = load_checkpoint(ckpt);
  ExperimentConfig cfg = ctx.cfg;
  cfg.market = solver.market();
  cfg.factor = solver.factor();
  cfg.grid = solver.grid();
  const PdeSolution sol = solve_pde_pair(cfg);
  PathBatch pb = make_path_batch(solver.grid(), solver.market(), solver.factor(),
                                 ctx.cfg.eval.replay_batch, ctx.cfg.seed, 0,
                                 rng::Purpose::kEvalNoise);
  const ReplayResult replay = replay_strategy(solver, pb, ctx.cfg.eval.batch_stats);
  const FkReport rep = feynman_kac_check(replay, pb, sol, solver.factor());

  io::Csv csv({"t", "rms_y", "max_y", "rms_z", "max_z"});
  for (int n = 0; n <= solver.grid().N; ++n)
    csv.row({solver.grid().t(n), rep.rms_y[n], rep.max_y[n],
             n < solver.grid().N ? rep.rms_z[n] : 0.0,
             n < solver.grid().N ? rep.max_z[n] : 0.0});
  ctx.emit("fk.csv", csv);
  ctx.metrics["worst_rms_y"] = rep.worst_rms_y();
  ctx.metrics["worst_rms_z"] = rep.worst_rms_z();
  ctx.metrics["excluded_fraction"] = rep.excluded_fraction;
  return 0;
}

int cmd_gain(RunContext& ctx, const fs::path& ckpt) {
  BsdeSolver solver = load_checkpoint(ckpt);
  NeuralStrategy strat(solver, ctx.cfg.eval.batch_stats);
  io::Csv csv({"t", "eta", "eps", "rho", "gain", "se", "J_base", "J_base_se"});
  double worst_z = -1e300;
  std::uint32_t stream = 100;
  for (double t : ctx.cfg.eval.probe_times) {
    const int t_index = static_cast<int>(t / solver.grid().dt() + 0.5);
    for (double eps_steps : ctx.cfg.eval.eps_steps) {
      for (double eta : ctx.cfg.eval.eta_grid) {
        const PerturbationSpec spec{t_index, static_cast<int>(eps_steps), eta};
        const GainEstimate g =
            estimate_gain(strat, spec, solver.market(), solver.factor(),
                          solver.grid(), ctx.cfg.eval.outer, ctx.cfg.eval.inner,
                          ctx.cfg.seed, stream);
        stream += 2;
        csv.row({g.t, g.eta, g.eps, g.rho, g.gain, g.se, g.base.J, g.base.J_se});
        if (g.se > 0) worst_z = std::max(worst_z, g.gain / g.se);
      }
    }
  }
  ctx.emit("gains.csv", csv);
  ctx.metrics["worst_gain_z"] = worst_z;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"time-consistent equilibrium portfolio engine"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_override;
  std::string seed_override;
  std::string checkpoint_path;
  app.add_option("--config", config_path, "configuration file (flat key = value)");
  app.add_option("--set", overrides, "override, e.g. --set market.rho=-0.31")
      ->take_all();
  app.add_option("--out", out_override, "output directory");
  app.add_option("--seed", seed_override, "RNG seed");

  auto* train = app.add_subcommand("train", "train the configured regime");
  auto* replay = app.add_subcommand("replay", "sample and mean trajectories");
  auto* sweep = app.add_subcommand("sweep", "gamma/zeta sensitivity sweep");
  auto* cmp_var = app.add_subcommand("compare-variance",
                                     "equilibrium vs utility-only benchmark");
  auto* cmp_rho = app.add_subcommand("compare-rho", "constrained strategies by rho");
  auto* table1 = app.add_subcommand("table1", "approximate vs constrained");
  auto* ode = app.add_subcommand("oracle-ode", "complete-market ODE oracle");
  auto* pde = app.add_subcommand("oracle-pde", "finite-difference PDE oracle");
  auto* fk = app.add_subcommand("fk-check", "solver vs PDE cross-validation");
  auto* gain = app.add_subcommand("gain", "perturbation-gain probe grid");
  for (auto* sc : {replay, cmp_var, fk, gain})
    sc->add_option("--checkpoint", checkpoint_path, "trained checkpoint path");

  CLI11_PARSE(app, argc, argv);

  try {
    ConfigMap cm = config_path.empty() ? ConfigMap::parse("")
                                       : ConfigMap::parse(io::read_file(config_path));
    for (const auto& ov : overrides) {
      const auto eq = ov.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("--set expects key=value, got '" + ov + "'");
      cm.set(ov.substr(0, eq), ov.substr(eq + 1));
    }
    if (!seed_override.empty()) cm.set("seed", seed_override);
    if (!out_override.empty()) cm.set("out", out_override);

    RunContext ctx;
    ctx.cfg = validate_config(cm);
    ctx.out = ctx.cfg.out_dir;
    fs::create_directories(ctx.out);

    const fs::path ckpt = checkpoint_path.empty()
                              ? ctx.out / "checkpoint.json"
                              : fs::path(checkpoint_path);

    int rc = 1;
    if (train->parsed()) ctx.subcommand = "train", rc = cmd_train(ctx);
    else if (replay->parsed()) ctx.subcommand = "replay", rc = cmd_replay(ctx, ckpt);
    else if (sweep->parsed()) ctx.subcommand = "sweep", rc = cmd_sweep(ctx);
    else if (cmp_var->parsed())
      ctx.subcommand = "compare-variance", rc = cmd_compare_variance(ctx, ckpt);
    else if (cmp_rho->parsed()) ctx.subcommand = "compare-rho", rc = cmd_compare_rho(ctx);
    else if (table1->parsed()) ctx.subcommand = "table1", rc = cmd_table1(ctx);
    else if (ode->parsed()) ctx.subcommand = "oracle-ode", rc = cmd_oracle_ode(ctx);
    else if (pde->parsed()) ctx.subcommand = "oracle-pde", rc = cmd_oracle_pde(ctx);
    else if (fk->parsed()) ctx.subcommand = "fk-check", rc = cmd_fk_check(ctx, ckpt);
    else if (gain->parsed()) ctx.subcommand = "gain", rc = cmd_gain(ctx, ckpt);
    if (rc == 0) ctx.finish();
    return rc;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
