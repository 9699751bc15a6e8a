#pragma once

// Experiment configuration: a flat, human-editable key-value file with
// dotted keys. Parsing fills documented defaults, validation reports the
// offending key path, and every run re-emits its resolved configuration
// so reruns are exact.

#include <algorithm>
#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tceq/bsde.hpp"
#include "tceq/io.hpp"
#include "tceq/market.hpp"
#include "tceq/pde.hpp"
#include "tceq/strategy.hpp"

namespace tceq {

class ConfigMap {
 public:
  static ConfigMap parse(const std::string& text) {
    ConfigMap cm;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": expected 'key = value'");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": empty key");
      cm.entries_[key] = value;
    }
    return cm;
  }

  void set(const std::string& key, const std::string& value) {
    entries_[trim(key)] = trim(value);
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& dflt) const {
    consumed_.insert(consumed_.end(), key);
    auto it = entries_.find(key);
    return it == entries_.end() ? dflt : it->second;
  }

  double get_double(const std::string& key, double dflt) const {
    auto it = entries_.find(key);
    consumed_.push_back(key);
    if (it == entries_.end()) return dflt;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw std::invalid_argument(key + ": expected a number, got '" + it->second + "'");
    }
  }

  long long get_int(const std::string& key, long long dflt) const {
    auto it = entries_.find(key);
    consumed_.push_back(key);
    if (it == entries_.end()) return dflt;
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw std::invalid_argument(key + ": expected an integer, got '" + it->second + "'");
    }
  }

  bool get_bool(const std::string& key, bool dflt) const {
    auto it = entries_.find(key);
    consumed_.push_back(key);
    if (it == entries_.end()) return dflt;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw std::invalid_argument(key + ": expected true/false, got '" + it->second + "'");
  }

  std::vector<double> get_doubles(const std::string& key,
                                  const std::vector<double>& dflt) const {
    auto it = entries_.find(key);
    consumed_.push_back(key);
    if (it == entries_.end()) return dflt;
    std::vector<double> out;
    std::istringstream is(it->second);
    std::string tok;
    while (std::getline(is, tok, ',')) {
      try {
        out.push_back(std::stod(trim(tok)));
      } catch (const std::exception&) {
        throw std::invalid_argument(key + ": expected comma-separated numbers");
      }
    }
    if (out.empty()) throw std::invalid_argument(key + ": empty list");
    return out;
  }

  std::vector<std::string> unknown_keys() const {
    std::vector<std::string> unknown;
    for (const auto& [k, v] : entries_)
      if (std::find(consumed_.begin(), consumed_.end(), k) == consumed_.end())
        unknown.push_back(k);
    return unknown;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> entries_;
  mutable std::vector<std::string> consumed_;
};

struct EvalConfig {
  int replay_batch = 1000;   // replay / figure batches
  int outer = 1000;          // conditional outer paths
  int inner = 100;           // sub-paths per outer path
  std::vector<double> probe_times = {0.0, 0.5, 1.0, 1.5};
  std::vector<double> eta_grid = {-1.0, -0.5, -0.25, 0.25, 0.5, 1.0};
  std::vector<double> eps_steps = {4, 8, 16};  // multiples of dt
  bool batch_stats = false;  // batch-norm statistics at replay time
};

struct PdeConfig {
  int M = 400;
  int Nt = 800;
  double n_sd = 7.0;
  bool terminal_one = false;   // reproduce the printed terminal condition
  double boundary_tol = 1.0;
  double x_lo = 0.0, x_hi = 0.0;  // equal -> derive from factor parameters
};

struct OdeConfig {
  int N = 1000;
  double theta_const = 0.273;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  MarketParams market;
  FactorParams factor;
  TimeGrid grid;
  StrategyRegime regime;
  TrainConfig train;
  EvalConfig eval;
  PdeConfig pde;
  OdeConfig ode;
  std::vector<double> table1_times = {0.0, 0.5, 1.0, 1.5, 2.0};
  std::string sweep_param = "gamma";
  std::vector<double> sweep_values = {0.05, 0.1, 0.5};
  std::vector<double> compare_rho_values = {-0.31, -0.62, -0.93};

  PdeGrid pde_grid() const {
    if (pde.x_hi > pde.x_lo) {
      PdeGrid g;
      g.x_lo = pde.x_lo;
      g.x_hi = pde.x_hi;
      g.M = pde.M;
      g.Nt = pde.Nt;
      return g;
    }
    return default_pde_grid(factor, grid, pde.n_sd, pde.M, pde.Nt);
  }

  std::string resolved_text() const;
  std::uint64_t hash() const { return io::fnv1a(resolved_text()); }
};

namespace detail_cfg {

inline RegimeTag parse_regime(const std::string& s) {
  if (s == "rho_zero") return RegimeTag::kRhoZero;
  if (s == "constrained") return RegimeTag::kConstrained;
  if (s == "approximate") return RegimeTag::kApproximate;
  if (s == "complete_market") return RegimeTag::kCompleteMarket;
  if (s == "benchmark") return RegimeTag::kBenchmark;
  throw std::invalid_argument(
      "regime: expected one of rho_zero|constrained|approximate|complete_market|benchmark, got '" +
      s + "'");
}

inline std::vector<LrStage> parse_lr_schedule(const std::string& s) {
  std::vector<LrStage> stages;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    const auto colon = tok.find(':');
    if (colon == std::string::npos)
      throw std::invalid_argument("train.lr_schedule: expected start:end pairs");
    try {
      stages.push_back(
          {std::stod(tok.substr(0, colon)), std::stod(tok.substr(colon + 1))});
    } catch (const std::exception&) {
      throw std::invalid_argument("train.lr_schedule: expected start:end pairs");
    }
  }
  if (stages.empty()) throw std::invalid_argument("train.lr_schedule: empty");
  return stages;
}

inline std::string lr_schedule_text(const std::vector<LrStage>& stages) {
  std::string out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (i) out += ',';
    out += io::num(stages[i].start) + ":" + io::num(stages[i].end);
  }
  return out;
}

inline std::string doubles_text(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += io::num(v[i]);
  }
  return out;
}

}  // namespace detail_cfg

// Builds and validates an ExperimentConfig; every violated invariant is
// reported with its key path. Unknown keys are rejected.
inline ExperimentConfig validate_config(const ConfigMap& cm) {
  ExperimentConfig c;
  c.seed = static_cast<std::uint64_t>(cm.get_int("seed", 1));
  c.out_dir = cm.get_string("out", "out");

  c.market.r = cm.get_double("market.r", 0.017);
  c.market.sigma = cm.get_double("market.sigma", 0.15);
  c.market.zeta = cm.get_double("market.zeta", 1.0);
  c.market.gamma = cm.get_double("market.gamma", 0.1);
  c.market.rho = cm.get_double("market.rho", 0.0);
  c.market.validate();

  c.factor.lambda = cm.get_double("factor.lambda", 0.27);
  c.factor.x_bar = cm.get_double("factor.x_bar", 0.273);
  c.factor.nu = cm.get_double("factor.nu", 0.065);
  c.factor.x0 = cm.get_double("factor.x0", 0.273);
  c.factor.trunc = cm.get_double("factor.trunc", 10000.0);
  c.factor.validate();

  c.grid.T = cm.get_double("grid.T", 2.0);
  c.grid.N = static_cast<int>(cm.get_int("grid.N", 40));
  c.grid.validate();

  c.regime.tag = detail_cfg::parse_regime(cm.get_string("regime", "rho_zero"));
  if (c.regime.tag == RegimeTag::kConstrained) {
    c.regime.constraint = Constraint{cm.get_double("constraint.lo", -10000.0),
                                     cm.get_double("constraint.hi", 10000.0)};
  } else {
    // Consume so wide-box defaults in files do not count as unknown keys.
    cm.get_double("constraint.lo", -10000.0);
    cm.get_double("constraint.hi", 10000.0);
  }
  c.regime.validate();

  if (c.market.gamma == 0.0 && c.regime.tag != RegimeTag::kBenchmark)
    throw std::invalid_argument(
        "market.gamma: 0 is allowed only for the benchmark regime");
  if (c.regime.tag == RegimeTag::kRhoZero && c.market.rho != 0.0)
    throw std::invalid_argument("market.rho: regime rho_zero requires rho = 0");

  c.train.epochs = static_cast<int>(cm.get_int("train.epochs", 5000));
  c.train.batch = static_cast<int>(cm.get_int("train.batch", 512));
  c.train.lr_stages = detail_cfg::parse_lr_schedule(cm.get_string(
      "train.lr_schedule", "8e-4:5e-4,5e-4:2e-4,2e-4:5e-5,5e-5:1e-5"));
  {
    const auto fr = cm.get_doubles("train.stage_fracs",
                                   std::vector<double>(c.train.lr_stages.size(),
                                                       1.0 / c.train.lr_stages.size()));
    c.train.stage_fracs = fr;
  }
  c.train.adam.beta1 = cm.get_double("train.adam_beta1", 0.9);
  c.train.adam.beta2 = cm.get_double("train.adam_beta2", 0.999);
  c.train.adam.eps = cm.get_double("train.adam_eps", 1e-8);
  {
    const auto h = cm.get_doubles("train.hidden", {11, 11});
    c.train.hidden.clear();
    for (double v : h) {
      if (v < 1 || v != static_cast<int>(v))
        throw std::invalid_argument("train.hidden: expected positive integers");
      c.train.hidden.push_back(static_cast<int>(v));
    }
  }
  c.train.bn_eps = cm.get_double("train.bn_eps", 1e-5);
  c.train.bn_momentum = cm.get_double("train.bn_momentum", 0.9);
  c.train.seed = c.seed;
  c.train.fresh_paths = cm.get_bool("train.fresh_paths", true);
  c.train.validate();

  c.eval.replay_batch = static_cast<int>(cm.get_int("eval.replay_batch", 1000));
  c.eval.outer = static_cast<int>(cm.get_int("eval.outer", 1000));
  c.eval.inner = static_cast<int>(cm.get_int("eval.inner", 100));
  c.eval.probe_times = cm.get_doubles("eval.probe_times", {0.0, 0.5, 1.0, 1.5});
  c.eval.eta_grid = cm.get_doubles("eval.eta_grid", {-1.0, -0.5, -0.25, 0.25, 0.5, 1.0});
  c.eval.eps_steps = cm.get_doubles("eval.eps_steps", {4, 8, 16});
  c.eval.batch_stats = cm.get_bool("eval.batch_stats", false);
  if (c.eval.replay_batch < 2 || c.eval.outer < 2 || c.eval.inner < 2)
    throw std::invalid_argument("eval: batches must be >= 2");
  for (double t : c.eval.probe_times) {
    const double steps = t / c.grid.dt();
    if (t < 0 || t >= c.grid.T || std::fabs(steps - std::round(steps)) > 1e-9)
      throw std::invalid_argument("eval.probe_times: must be grid times in [0, T)");
  }
  for (double e : c.eval.eps_steps)
    if (e < 1 || e != std::floor(e))
      throw std::invalid_argument("eval.eps_steps: expected positive step counts");

  c.pde.M = static_cast<int>(cm.get_int("pde.M", 400));
  c.pde.Nt = static_cast<int>(cm.get_int("pde.Nt", 800));
  c.pde.n_sd = cm.get_double("pde.n_sd", 7.0);
  c.pde.terminal_one = cm.get_bool("pde.terminal_one", false);
  c.pde.boundary_tol = cm.get_double("pde.boundary_tol", 1.0);
  c.pde.x_lo = cm.get_double("pde.x_lo", 0.0);
  c.pde.x_hi = cm.get_double("pde.x_hi", 0.0);
  if (c.pde.Nt % c.grid.N != 0)
    throw std::invalid_argument("pde.Nt: must be a multiple of grid.N");

  c.ode.N = static_cast<int>(cm.get_int("ode.N", 1000));
  c.ode.theta_const = cm.get_double("ode.theta", 0.273);

  c.table1_times = cm.get_doubles("table1.times", {0.0, 0.5, 1.0, 1.5, 2.0});
  c.sweep_param = cm.get_string("sweep.param", "gamma");
  if (c.sweep_param != "gamma" && c.sweep_param != "zeta")
    throw std::invalid_argument("sweep.param: expected gamma or zeta");
  c.sweep_values = cm.get_doubles("sweep.values", {0.05, 0.1, 0.5});
  if (!std::is_sorted(c.sweep_values.begin(), c.sweep_values.end()))
    throw std::invalid_argument("sweep.values: must be sorted ascending");
  c.compare_rho_values = cm.get_doubles("compare_rho.values", {-0.31, -0.62, -0.93});

  const auto unknown = cm.unknown_keys();
  if (!unknown.empty()) {
    std::string msg = "unknown config key(s):";
    for (const auto& k : unknown) msg += " " + k;
    throw std::invalid_argument(msg);
  }
  return c;
}

inline ExperimentConfig validate_config(const std::string& text) {
  return validate_config(ConfigMap::parse(text));
}

inline std::string ExperimentConfig::resolved_text() const {
  std::string s;
  auto kv = [&s](const std::string& k, const std::string& v) {
    s += k + " = " + v + "\n";
  };
  // out_dir is where the run lives, not what it computes; it stays out of
  // the resolved text so relocated reruns hash identically.
  kv("seed", std::to_string(seed));
  kv("market.r", io::num(market.r));
  kv("market.sigma", io::num(market.sigma));
  kv("market.zeta", io::num(market.zeta));
  kv("market.gamma", io::num(market.gamma));
  kv("market.rho", io::num(market.rho));
  kv("factor.lambda", io::num(factor.lambda));
  kv("factor.x_bar", io::num(factor.x_bar));
  kv("factor.nu", io::num(factor.nu));
  kv("factor.x0", io::num(factor.x0));
  kv("factor.trunc", io::num(factor.trunc));
  kv("grid.T", io::num(grid.T));
  kv("grid.N", std::to_string(grid.N));
  kv("regime", regime_name(regime.tag));
  if (regime.constraint) {
    kv("constraint.lo", io::num(regime.constraint->lo));
    kv("constraint.hi", io::num(regime.constraint->hi));
  }
  kv("train.epochs", std::to_string(train.epochs));
  kv("train.batch", std::to_string(train.batch));
  kv("train.lr_schedule", detail_cfg::lr_schedule_text(train.lr_stages));
  kv("train.stage_fracs", detail_cfg::doubles_text(train.stage_fracs));
  kv("train.adam_beta1", io::num(train.adam.beta1));
  kv("train.adam_beta2", io::num(train.adam.beta2));
  kv("train.adam_eps", io::num(train.adam.eps));
  {
    std::vector<double> h(train.hidden.begin(), train.hidden.end());
    kv("train.hidden", detail_cfg::doubles_text(h));
  }
  kv("train.bn_eps", io::num(train.bn_eps));
  kv("train.bn_momentum", io::num(train.bn_momentum));
  kv("train.fresh_paths", train.fresh_paths ? "true" : "false");
  kv("eval.replay_batch", std::to_string(eval.replay_batch));
  kv("eval.outer", std::to_string(eval.outer));
  kv("eval.inner", std::to_string(eval.inner));
  kv("eval.probe_times", detail_cfg::doubles_text(eval.probe_times));
  kv("eval.eta_grid", detail_cfg::doubles_text(eval.eta_grid));
  kv("eval.eps_steps", detail_cfg::doubles_text(eval.eps_steps));
  kv("eval.batch_stats", eval.batch_stats ? "true" : "false");
  kv("pde.M", std::to_string(pde.M));
  kv("pde.Nt", std::to_string(pde.Nt));
  kv("pde.n_sd", io::num(pde.n_sd));
  kv("pde.terminal_one", pde.terminal_one ? "true" : "false");
  kv("pde.boundary_tol", io::num(pde.boundary_tol));
  kv("pde.x_lo", io::num(pde.x_lo));
  kv("pde.x_hi", io::num(pde.x_hi));
  kv("ode.N", std::to_string(ode.N));
  kv("ode.theta", io::num(ode.theta_const));
  kv("table1.times", detail_cfg::doubles_text(table1_times));
  kv("sweep.param", sweep_param);
  kv("sweep.values", detail_cfg::doubles_text(sweep_values));
  kv("compare_rho.values", detail_cfg::doubles_text(compare_rho_values));
  return s;
}

}  // namespace tceq
