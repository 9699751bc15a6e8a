#pragma once

// Small feedforward networks: affine -> batch norm -> rectifier for each
// hidden layer, then a bare affine output. One network per interior time
// step of the BSDE discretization.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tceq/autodiff.hpp"
#include "tceq/rng.hpp"

namespace tceq::nn {

// Flat registry of trainable tensors. The optimizer and the
// finite-difference oracle address every scalar through this.
struct ParamStore {
  std::vector<ad::Tensor> values;
  std::vector<ad::Tensor> grads;
  std::vector<std::string> names;

  int add(std::string name, ad::Tensor t) {
    grads.emplace_back(t.rows, t.cols);
    values.push_back(std::move(t));
    names.push_back(std::move(name));
    return static_cast<int>(values.size()) - 1;
  }

  void zero_grads() {
    for (auto& g : grads)
      for (double& x : g.v) x = 0.0;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : values) n += t.size();
    return n;
  }

  // Flat scalar addressing, in registration order.
  std::pair<int, std::size_t> locate(std::size_t flat) const {
    for (std::size_t p = 0; p < values.size(); ++p) {
      if (flat < values[p].size()) return {static_cast<int>(p), flat};
      flat -= values[p].size();
    }
    throw std::out_of_range("ParamStore: flat index out of range");
  }
  double get_scalar(std::size_t flat) const {
    auto [p, off] = locate(flat);
    return values[p].v[off];
  }
  void set_scalar(std::size_t flat, double x) {
    auto [p, off] = locate(flat);
    values[p].v[off] = x;
  }
  double grad_scalar(std::size_t flat) const {
    auto [p, off] = locate(flat);
    return grads[p].v[off];
  }
  std::string scalar_name(std::size_t flat) const {
    auto [p, off] = locate(flat);
    return names[p] + "[" + std::to_string(off) + "]";
  }
};

struct MlpSpec {
  int in_dim = 1;
  std::vector<int> hidden = {11, 11};
  int out_dim = 1;
  double bn_eps = 1e-5;
  double bn_momentum = 0.9;

  std::vector<int> widths() const {
    std::vector<int> w;
    w.push_back(in_dim);
    for (int h : hidden) w.push_back(h);
    w.push_back(out_dim);
    return w;
  }
};

class Mlp {
 public:
  Mlp() = default;

  // Registers parameters in `store`. Weights are fan-in scaled uniform,
  // addressed by (net_id, layer, index) so initialization is
  // seed-reproducible and independent of construction order.
  void init(ParamStore& store, const MlpSpec& spec, std::uint64_t seed,
            std::uint32_t net_id) {
    spec_ = spec;
    const auto w = spec.widths();
    const int n_layers = static_cast<int>(w.size()) - 1;
    const std::string prefix = "net" + std::to_string(net_id);
    for (int l = 0; l < n_layers; ++l) {
      const int fan_in = w[l], fan_out = w[l + 1];
      ad::Tensor W(fan_in, fan_out);
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < W.v.size(); ++i) {
        rng::Counter ctr{net_id, static_cast<std::uint32_t>(l),
                         static_cast<std::uint32_t>(i),
                         static_cast<std::uint32_t>(rng::Purpose::kWeightInit)};
        W.v[i] = rng::uniform_symmetric(seed, ctr, bound);
      }
      w_idx_.push_back(store.add(prefix + ".W" + std::to_string(l), std::move(W)));
      b_idx_.push_back(store.add(prefix + ".b" + std::to_string(l),
                                 ad::Tensor(1, fan_out)));
      if (l < n_layers - 1) {
        ad::Tensor gamma(1, fan_out, 1.0);
        gamma_idx_.push_back(store.add(prefix + ".bn_gamma" + std::to_string(l),
                                       std::move(gamma)));
        beta_idx_.push_back(store.add(prefix + ".bn_beta" + std::to_string(l),
                                      ad::Tensor(1, fan_out)));
        ad::BnRunning rs;
        rs.mean.assign(fan_out, 0.0);
        rs.var.assign(fan_out, 1.0);
        bn_.push_back(std::move(rs));
      }
    }
  }

  const MlpSpec& spec() const { return spec_; }
  std::vector<ad::BnRunning>& bn_state() { return bn_; }
  const std::vector<ad::BnRunning>& bn_state() const { return bn_; }

  // Forward pass on the tape. Train mode uses batch statistics (batch >= 2);
  // eval mode uses running statistics.
  ad::Var forward(ad::Tape& tape, ParamStore& store, ad::Var x, bool train,
                  bool update_running) {
    const int n_layers = static_cast<int>(w_idx_.size());
    ad::Var h = x;
    for (int l = 0; l < n_layers; ++l) {
      ad::Var W = tape.param(store.values[w_idx_[l]], &store.grads[w_idx_[l]]);
      ad::Var b = tape.param(store.values[b_idx_[l]], &store.grads[b_idx_[l]]);
      h = tape.add(tape.matmul(h, W), b);
      if (l < n_layers - 1) {
        ad::Var gamma =
            tape.param(store.values[gamma_idx_[l]], &store.grads[gamma_idx_[l]]);
        ad::Var beta =
            tape.param(store.values[beta_idx_[l]], &store.grads[beta_idx_[l]]);
        h = tape.batch_norm(h, gamma, beta, bn_[l], train, update_running,
                            spec_.bn_eps, spec_.bn_momentum);
        h = tape.relu(h);
      }
    }
    return h;
  }

  // Plain batched evaluation without a tape. Uses running statistics by
  // default; `batch_stats` switches to statistics of the supplied batch.
  void eval(const ParamStore& store, const double* x, int batch, double* out,
            bool batch_stats = false) const {
    const auto widths = spec_.widths();
    const int n_layers = static_cast<int>(w_idx_.size());
    std::vector<double> cur(x, x + static_cast<std::size_t>(batch) * spec_.in_dim);
    int cur_w = spec_.in_dim;
    for (int l = 0; l < n_layers; ++l) {
      const ad::Tensor& W = store.values[w_idx_[l]];
      const ad::Tensor& b = store.values[b_idx_[l]];
      const int next_w = widths[l + 1];
      std::vector<double> nxt(static_cast<std::size_t>(batch) * next_w, 0.0);
      for (int i = 0; i < batch; ++i)
        for (int k = 0; k < cur_w; ++k) {
          const double xv = cur[static_cast<std::size_t>(i) * cur_w + k];
          if (xv == 0.0) continue;
          for (int j = 0; j < next_w; ++j)
            nxt[static_cast<std::size_t>(i) * next_w + j] += xv * W.at(k, j);
        }
      for (int i = 0; i < batch; ++i)
        for (int j = 0; j < next_w; ++j)
          nxt[static_cast<std::size_t>(i) * next_w + j] += b.v[j];
      if (l < n_layers - 1) {
        const ad::Tensor& gamma = store.values[gamma_idx_[l]];
        const ad::Tensor& beta = store.values[beta_idx_[l]];
        const ad::BnRunning& rs = bn_[l];
        for (int j = 0; j < next_w; ++j) {
          double mean = rs.mean[j], var = rs.var[j];
          if (batch_stats) {
            mean = 0.0;
            for (int i = 0; i < batch; ++i)
              mean += nxt[static_cast<std::size_t>(i) * next_w + j];
            mean /= batch;
            var = 0.0;
            for (int i = 0; i < batch; ++i) {
              const double d = nxt[static_cast<std::size_t>(i) * next_w + j] - mean;
              var += d * d;
            }
            var /= batch;
          }
          const double inv = 1.0 / std::sqrt(var + spec_.bn_eps);
          for (int i = 0; i < batch; ++i) {
            double& v = nxt[static_cast<std::size_t>(i) * next_w + j];
            v = gamma.v[j] * (v - mean) * inv + beta.v[j];
            if (v < 0.0) v = 0.0;  // rectifier
          }
        }
      }
      cur = std::move(nxt);
      cur_w = next_w;
    }
    for (std::size_t i = 0; i < cur.size(); ++i) out[i] = cur[i];
  }

  // Serialization hooks.
  const std::vector<int>& weight_indices() const { return w_idx_; }
  const std::vector<int>& bias_indices() const { return b_idx_; }
  const std::vector<int>& gamma_indices() const { return gamma_idx_; }
  const std::vector<int>& beta_indices() const { return beta_idx_; }

 private:
  MlpSpec spec_;
  std::vector<int> w_idx_, b_idx_, gamma_idx_, beta_idx_;
  std::vector<ad::BnRunning> bn_;
};

}  // namespace tceq::nn
