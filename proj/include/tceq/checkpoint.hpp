#pragma once

// Versioned JSON checkpoint for trained solvers: header, trainable
// scalars, per-network parameter blocks with batch-norm running
// statistics. nlohmann::json round-trips doubles exactly.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "tceq/bsde.hpp"
#include "tceq/io.hpp"

namespace tceq {

inline nlohmann::json checkpoint_to_json(const BsdeSolver& s) {
  using nlohmann::json;
  json j;
  j["format"] = "tceq-checkpoint";
  j["version"] = 1;
  j["regime"] = regime_name(s.regime().tag);
  if (s.regime().constraint) {
    j["constraint"] = {{"lo", s.regime().constraint->lo},
                       {"hi", s.regime().constraint->hi}};
  }
  const MarketParams& mp = s.market();
  j["market"] = {{"r", mp.r},
                 {"sigma", mp.sigma},
                 {"zeta", mp.zeta},
                 {"gamma", mp.gamma},
                 {"rho", mp.rho}};
  const FactorParams& fp = s.factor();
  j["factor"] = {{"lambda", fp.lambda},
                 {"x_bar", fp.x_bar},
                 {"nu", fp.nu},
                 {"x0", fp.x0},
                 {"trunc", fp.trunc}};
  j["grid"] = {{"T", s.grid().T}, {"N", s.grid().N}};
  const TrainConfig& tc = s.train_config();
  json stages = json::array();
  for (const auto& st : tc.lr_stages) stages.push_back({st.start, st.end});
  j["train"] = {{"epochs", tc.epochs},
                {"batch", tc.batch},
                {"lr_stages", stages},
                {"stage_fracs", tc.stage_fracs},
                {"adam_beta1", tc.adam.beta1},
                {"adam_beta2", tc.adam.beta2},
                {"adam_eps", tc.adam.eps},
                {"hidden", tc.hidden},
                {"bn_eps", tc.bn_eps},
                {"bn_momentum", tc.bn_momentum},
                {"seed", tc.seed},
                {"fresh_paths", tc.fresh_paths}};
  j["scalars"] = {{"y0", s.y0()}, {"z0", s.z0()}};
  if (s.coupled()) {
    j["scalars"]["ytilde0"] = s.ytilde0();
    j["scalars"]["ztilde0"] = s.ztilde0();
  }
  json nets = json::array();
  for (const auto& net : s.nets()) {
    json layers = json::array();
    const auto& wi = net.weight_indices();
    const auto& bi = net.bias_indices();
    const auto& gi = net.gamma_indices();
    const auto& ti = net.beta_indices();
    for (std::size_t l = 0; l < wi.size(); ++l) {
      json layer;
      const ad::Tensor& w = s.store().values[wi[l]];
      layer["rows"] = w.rows;
      layer["cols"] = w.cols;
      layer["W"] = w.v;
      layer["b"] = s.store().values[bi[l]].v;
      if (l < gi.size()) {
        layer["bn_gamma"] = s.store().values[gi[l]].v;
        layer["bn_beta"] = s.store().values[ti[l]].v;
        layer["bn_mean"] = net.bn_state()[l].mean;
        layer["bn_var"] = net.bn_state()[l].var;
      }
      layers.push_back(std::move(layer));
    }
    nets.push_back({{"layers", std::move(layers)}});
  }
  j["nets"] = std::move(nets);
  return j;
}

inline BsdeSolver checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "tceq-checkpoint" || j.value("version", 0) != 1)
    throw std::runtime_error("checkpoint: unrecognized format or version");

  StrategyRegime regime;
  const std::string tag = j.at("regime").get<std::string>();
  if (tag == "rho_zero") regime.tag = RegimeTag::kRhoZero;
  else if (tag == "constrained") regime.tag = RegimeTag::kConstrained;
  else if (tag == "approximate") regime.tag = RegimeTag::kApproximate;
  else throw std::runtime_error("checkpoint: unsupported regime " + tag);
  if (j.contains("constraint"))
    regime.constraint = Constraint{j["constraint"].at("lo").get<double>(),
                                   j["constraint"].at("hi").get<double>()};

  MarketParams mp;
  mp.r = j["market"].at("r").get<double>();
  mp.sigma = j["market"].at("sigma").get<double>();
  mp.zeta = j["market"].at("zeta").get<double>();
  mp.gamma = j["market"].at("gamma").get<double>();
  mp.rho = j["market"].at("rho").get<double>();

  FactorParams fp;
  fp.lambda = j["factor"].at("lambda").get<double>();
  fp.x_bar = j["factor"].at("x_bar").get<double>();
  fp.nu = j["factor"].at("nu").get<double>();
  fp.x0 = j["factor"].at("x0").get<double>();
  fp.trunc = j["factor"].at("trunc").get<double>();

  TimeGrid grid{j["grid"].at("T").get<double>(), j["grid"].at("N").get<int>()};

  TrainConfig tc;
  const auto& jt = j.at("train");
  tc.epochs = jt.at("epochs").get<int>();
  tc.batch = jt.at("batch").get<int>();
  tc.lr_stages.clear();
  for (const auto& st : jt.at("lr_stages"))
    tc.lr_stages.push_back({st.at(0).get<double>(), st.at(1).get<double>()});
  tc.stage_fracs = jt.at("stage_fracs").get<std::vector<double>>();
  tc.adam.beta1 = jt.at("adam_beta1").get<double>();
  tc.adam.beta2 = jt.at("adam_beta2").get<double>();
  tc.adam.eps = jt.at("adam_eps").get<double>();
  tc.hidden = jt.at("hidden").get<std::vector<int>>();
  tc.bn_eps = jt.at("bn_eps").get<double>();
  tc.bn_momentum = jt.at("bn_momentum").get<double>();
  tc.seed = jt.at("seed").get<std::uint64_t>();
  tc.fresh_paths = jt.at("fresh_paths").get<bool>();

  BsdeSolver s(regime, mp, fp, grid, tc);
  s.set_y0(j["scalars"].at("y0").get<double>());
  s.set_z0(j["scalars"].at("z0").get<double>());
  if (s.coupled()) {
    s.set_ytilde0(j["scalars"].at("ytilde0").get<double>());
    s.set_ztilde0(j["scalars"].at("ztilde0").get<double>());
  }
  const auto& nets = j.at("nets");
  if (nets.size() != s.nets().size())
    throw std::runtime_error("checkpoint: network count differs from grid");
  for (std::size_t k = 0; k < nets.size(); ++k) {
    nn::Mlp& net = s.nets()[k];
    const auto& layers = nets[k].at("layers");
    const auto& wi = net.weight_indices();
    const auto& bi = net.bias_indices();
    const auto& gi = net.gamma_indices();
    const auto& ti = net.beta_indices();
    if (layers.size() != wi.size())
      throw std::runtime_error("checkpoint: layer count mismatch");
    for (std::size_t l = 0; l < wi.size(); ++l) {
      const auto& layer = layers[l];
      auto& w = s.store().values[wi[l]];
      const auto wv = layer.at("W").get<std::vector<double>>();
      if (layer.at("rows").get<int>() != w.rows ||
          layer.at("cols").get<int>() != w.cols || wv.size() != w.v.size())
        throw std::runtime_error("checkpoint: weight shape mismatch");
      w.v = wv;
      s.store().values[bi[l]].v = layer.at("b").get<std::vector<double>>();
      if (l < gi.size()) {
        s.store().values[gi[l]].v = layer.at("bn_gamma").get<std::vector<double>>();
        s.store().values[ti[l]].v = layer.at("bn_beta").get<std::vector<double>>();
        net.bn_state()[l].mean = layer.at("bn_mean").get<std::vector<double>>();
        net.bn_state()[l].var = layer.at("bn_var").get<std::vector<double>>();
      }
    }
  }
  return s;
}

inline void save_checkpoint(const BsdeSolver& s, const std::filesystem::path& path) {
  io::atomic_write(path, checkpoint_to_json(s).dump(1));
}

inline BsdeSolver load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw std::runtime_error("checkpoint not found: " + path.string() +
                             " (run the train subcommand first)");
  return checkpoint_from_json(nlohmann::json::parse(io::read_file(path)));
}

}  // namespace tceq
