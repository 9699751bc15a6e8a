#pragma once

// Adam optimizer over a ParamStore, standard first/second moment update
// with bias correction.

#include <cmath>
#include <vector>

#include "tceq/nn.hpp"

namespace tceq::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const ParamStore& store, AdamConfig cfg) : cfg_(cfg) {
    m_.reserve(store.values.size());
    v_.reserve(store.values.size());
    for (const auto& t : store.values) {
      m_.emplace_back(t.rows, t.cols);
      v_.emplace_back(t.rows, t.cols);
    }
  }

  void step(ParamStore& store, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < store.values.size(); ++p) {
      auto& val = store.values[p].v;
      const auto& g = store.grads[p].v;
      auto& m = m_[p].v;
      auto& v = v_[p].v;
      for (std::size_t i = 0; i < val.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        val[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  long long steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<ad::Tensor> m_, v_;
  long long t_ = 0;
};

}  // namespace tceq::nn
