#pragma once

// Reverse-mode automatic differentiation over an explicit operation tape.
// Values are small row-major matrices; the batch dimension is the row
// dimension. Granularity is one node per tensor op, which keeps the tape
// for a full unrolled BSDE rollout at a few dozen nodes per time step.
//
// Broadcasting: binary elementwise ops accept operands whose row or
// column count is either equal to the output's or 1; gradients fold back
// over broadcast dimensions by summation (fixed order, deterministic).

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tceq::ad {

struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int r, int c, double fill = 0.0)
      : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill) {}

  static Tensor scalar(double x) {
    Tensor t(1, 1);
    t.v[0] = x;
    return t;
  }

  double& at(int i, int j) { return v[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return v[static_cast<std::size_t>(i) * cols + j]; }
  std::size_t size() const { return v.size(); }

  bool all_finite() const {
    for (double x : v) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }
};

struct Var {
  int id = -1;
};

// Running statistics of one batch-norm layer (one entry per feature).
struct BnRunning {
  std::vector<double> mean;
  std::vector<double> var;
};

class Tape {
 public:
  void reset() { nodes_.clear(); }
  std::size_t node_count() const { return nodes_.size(); }

  const Tensor& value(Var x) const { return nodes_[check(x)].value; }
  const Tensor& grad(Var x) const { return nodes_[check(x)].grad; }

  // Leaf carrying data; no gradient is propagated outward.
  Var input(Tensor t) {
    return push(std::move(t), nullptr, {});
  }

  // Leaf bound to a trainable tensor; backward() accumulates into *sink.
  Var param(const Tensor& value, Tensor* sink) {
    return push(value, sink, {});
  }

  Var add(Var a, Var b) { return binary(a, b, BinOp::kAdd); }
  Var sub(Var a, Var b) { return binary(a, b, BinOp::kSub); }
  Var mul(Var a, Var b) { return binary(a, b, BinOp::kMul); }
  Var div(Var a, Var b) { return binary(a, b, BinOp::kDiv); }

  Var scale(Var a, double c) {
    Tensor out = nodes_[check(a)].value;
    for (double& x : out.v) x *= c;
    const int ia = a.id;
    return push(std::move(out), nullptr, [this, ia, c](const Tensor& g, int) {
      accumulate_scaled(ia, g, c);
    });
  }

  Var add_const(Var a, double c) {
    Tensor out = nodes_[check(a)].value;
    for (double& x : out.v) x += c;
    const int ia = a.id;
    return push(std::move(out), nullptr, [this, ia](const Tensor& g, int) {
      accumulate_scaled(ia, g, 1.0);
    });
  }

  Var exp(Var a) {
    Tensor out = nodes_[check(a)].value;
    for (double& x : out.v) x = std::exp(x);
    const int ia = a.id;
    return push(std::move(out), nullptr, [this, ia](const Tensor& g, int self) {
      Tensor& ga = grad_buf(ia);
      const Tensor& y = nodes_[self].value;
      for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * y.v[i];
    });
  }

  Var relu(Var a) {
    Tensor out = nodes_[check(a)].value;
    for (double& x : out.v) x = x > 0.0 ? x : 0.0;
    const int ia = a.id;
    return push(std::move(out), nullptr, [this, ia](const Tensor& g, int self) {
      Tensor& ga = grad_buf(ia);
      const Tensor& y = nodes_[self].value;
      for (std::size_t i = 0; i < g.v.size(); ++i)
        ga.v[i] += y.v[i] > 0.0 ? g.v[i] : 0.0;
    });
  }

  Var square(Var a) {
    Tensor out = nodes_[check(a)].value;
    for (double& x : out.v) x *= x;
    const int ia = a.id;
    return push(std::move(out), nullptr, [this, ia](const Tensor& g, int) {
      Tensor& ga = grad_buf(ia);
      const Tensor& x = nodes_[ia].value;
      for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += 2.0 * x.v[i] * g.v[i];
    });
  }

  // Elementwise clamp; subgradient zero outside the open interval.
  Var clamp(Var a, double lo, double hi) {
    const Tensor& x = nodes_[check(a)].value;
    Tensor out = x;
    for (double& v : out.v) v = v < lo ? lo : (v > hi ? hi : v);
    const int ia = a.id;
    return push(std::move(out), nullptr, [this, ia, lo, hi](const Tensor& g, int) {
      Tensor& ga = grad_buf(ia);
      const Tensor& x0 = nodes_[ia].value;
      for (std::size_t i = 0; i < g.v.size(); ++i)
        ga.v[i] += (x0.v[i] > lo && x0.v[i] < hi) ? g.v[i] : 0.0;
            });
  }

  // Column j of a (b, k) tensor, as (b, 1).
  Var col(Var a, int j) {
    const Tensor& x = nodes_[check(a)].value;
    Tensor out(x.rows, 1);
    for (int i = 0; i < x.rows; ++i) out.v[i] = x.at(i, j);
    const int ia = a.id;
    return push(std::move(out), nullptr, [this, ia, j](const Tensor& g, int) {
      Tensor& ga = grad_buf(ia);
      const int cols = nodes_[ia].value.cols;
      for (int i = 0; i < g.rows; ++i)
        ga.v[static_cast<std::size_t>(i) * cols + j] += g.v[i];
    });
  }

  Var matmul(Var a, Var b) {
    const Tensor& x = nodes_[check(a)].value;
    const Tensor& w = nodes_[check(b)].value;
    if (x.cols != w.rows) throw std::logic_error("matmul: inner dimensions differ");
    Tensor out(x.rows, w.cols);
    for (int i = 0; i < x.rows; ++i) {
      for (int k = 0; k < x.cols; ++k) {
        const double xv = x.at(i, k);
        if (xv == 0.0) continue;
        for (int j = 0; j < w.cols; ++j) out.at(i, j) += xv * w.at(k, j);
      }
    }
    const int ia = a.id, ib = b.id;
    return push(std::move(out), nullptr, [this, ia, ib](const Tensor& g, int) {
      const Tensor& x0 = nodes_[ia].value;
      const Tensor& w0 = nodes_[ib].value;
      Tensor& ga = grad_buf(ia);
      Tensor& gb = grad_buf(ib);
      // dX = g W^T
      for (int i = 0; i < x0.rows; ++i)
        for (int k = 0; k < x0.cols; ++k) {
          double s = 0.0;
          for (int j = 0; j < w0.cols; ++j) s += g.at(i, j) * w0.at(k, j);
          ga.at(i, k) += s;
        }
      // dW = X^T g
      for (int k = 0; k < w0.rows; ++k)
        for (int j = 0; j < w0.cols; ++j) {
          double s = 0.0;
          for (int i = 0; i < x0.rows; ++i) s += x0.at(i, k) * g.at(i, j);
          gb.at(k, j) += s;
        }
    });
  }

  // Batch normalization over the row (batch) dimension, one statistic per
  // column. In train mode the batch statistics enter the graph; running
  // statistics are an optional non-differentiable side effect. In eval
  // mode the stored running statistics are used and the map is affine.
  Var batch_norm(Var x, Var gamma, Var beta, BnRunning& running, bool train,
                 bool update_running, double eps, double momentum) {
    const Tensor& xv = nodes_[check(x)].value;
    const Tensor& gv = nodes_[check(gamma)].value;
    const Tensor& bv = nodes_[check(beta)].value;
    const int b = xv.rows, k = xv.cols;
    if (gv.cols != k || bv.cols != k || gv.rows != 1 || bv.rows != 1)
      throw std::logic_error("batch_norm: gamma/beta must be (1, cols)");
    if (static_cast<int>(running.mean.size()) != k)
      throw std::logic_error("batch_norm: running stats have wrong width");
    if (train && b < 2)
      throw std::invalid_argument("batch_norm: train mode requires batch >= 2");

    Tensor out(b, k);
    const int ix = x.id, ig = gamma.id, ibt = beta.id;
    if (train) {
      std::vector<double> mu(k, 0.0), inv(k, 0.0);
      Tensor xhat(b, k);
      for (int j = 0; j < k; ++j) {
        double m = 0.0;
        for (int i = 0; i < b; ++i) m += xv.at(i, j);
        m /= b;
        double var = 0.0;
        for (int i = 0; i < b; ++i) {
          const double d = xv.at(i, j) - m;
          var += d * d;
        }
        var /= b;
        mu[j] = m;
        inv[j] = 1.0 / std::sqrt(var + eps);
        if (update_running) {
          running.mean[j] = momentum * running.mean[j] + (1.0 - momentum) * m;
          running.var[j] = momentum * running.var[j] + (1.0 - momentum) * var;
        }
        for (int i = 0; i < b; ++i) {
          const double xh = (xv.at(i, j) - m) * inv[j];
          xhat.at(i, j) = xh;
          out.at(i, j) = gv.v[j] * xh + bv.v[j];
        }
      }
      return push(std::move(out), nullptr,
                  [this, ix, ig, ibt, xhat = std::move(xhat), inv = std::move(inv), b,
                   k](const Tensor& g, int) {
                    Tensor& gx = grad_buf(ix);
                    Tensor& gg = grad_buf(ig);
                    Tensor& gb2 = grad_buf(ibt);
                    const Tensor& gam = nodes_[ig].value;
                    for (int j = 0; j < k; ++j) {
                      double sum_dxh = 0.0, sum_dxh_xh = 0.0, dgamma = 0.0, dbeta = 0.0;
                      for (int i = 0; i < b; ++i) {
                        const double go = g.at(i, j);
                        const double dxh = go * gam.v[j];
                        dgamma += go * xhat.at(i, j);
                        dbeta += go;
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xhat.at(i, j);
                      }
                      gg.v[j] += dgamma;
                      gb2.v[j] += dbeta;
                      for (int i = 0; i < b; ++i) {
                        const double dxh = g.at(i, j) * gam.v[j];
                        gx.at(i, j) += inv[j] * (dxh - sum_dxh / b -
                                                 xhat.at(i, j) * sum_dxh_xh / b);
                      }
                    }
                  });
    }
    // Eval mode: affine in x with frozen statistics.
    std::vector<double> inv(k);
    for (int j = 0; j < k; ++j) inv[j] = 1.0 / std::sqrt(running.var[j] + eps);
    Tensor xhat(b, k);
    for (int j = 0; j < k; ++j)
      for (int i = 0; i < b; ++i) {
        const double xh = (xv.at(i, j) - running.mean[j]) * inv[j];
        xhat.at(i, j) = xh;
        out.at(i, j) = gv.v[j] * xh + bv.v[j];
      }
    return push(std::move(out), nullptr,
                [this, ix, ig, ibt, xhat = std::move(xhat), inv = std::move(inv), b,
                 k](const Tensor& g, int) {
                  Tensor& gx = grad_buf(ix);
                  Tensor& gg = grad_buf(ig);
                  Tensor& gb2 = grad_buf(ibt);
                  const Tensor& gam = nodes_[ig].value;
                  for (int j = 0; j < k; ++j) {
                    double dgamma = 0.0, dbeta = 0.0;
                    for (int i = 0; i < b; ++i) {
                      const double go = g.at(i, j);
                      dgamma += go * xhat.at(i, j);
                      dbeta += go;
                      gx.at(i, j) += go * gam.v[j] * inv[j];
                    }
                    gg.v[j] += dgamma;
                    gb2.v[j] += dbeta;
                  }
                });
  }

  // Mean of squared entries -> (1,1).
  Var mean_sq(Var a) {
    const Tensor& x = nodes_[check(a)].value;
    double s = 0.0;
    for (double v : x.v) s += v * v;
    Tensor out = Tensor::scalar(s / static_cast<double>(x.size()));
    const int ia = a.id;
    return push(std::move(out), nullptr, [this, ia](const Tensor& g, int) {
      Tensor& ga = grad_buf(ia);
      const Tensor& x0 = nodes_[ia].value;
      const double c = 2.0 * g.v[0] / static_cast<double>(x0.size());
      for (std::size_t i = 0; i < x0.v.size(); ++i) ga.v[i] += c * x0.v[i];
    });
  }

  // Reverse pass from a scalar node; parameter leaves accumulate into
  // their bound sinks. Safe to call once per forward build.
  void backward(Var loss) {
    const int lid = check(loss);
    Node& ln = nodes_[lid];
    if (ln.value.size() != 1) throw std::logic_error("backward: loss must be scalar");
    for (Node& n : nodes_) {
      n.grad = Tensor();
    }
    grad_buf(lid).v[0] = 1.0;
    for (int id = lid; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward(n.grad, id);
      if (n.sink) {
        if (n.sink->size() != n.grad.size())
          throw std::logic_error("backward: sink shape mismatch");
        for (std::size_t i = 0; i < n.grad.v.size(); ++i) n.sink->v[i] += n.grad.v[i];
      }
    }
  }

 private:
  enum class BinOp { kAdd, kSub, kMul, kDiv };

  struct Node {
    Tensor value;
    Tensor grad;
    Tensor* sink = nullptr;
    std::function<void(const Tensor&, int)> backward;
  };

  std::vector<Node> nodes_;

  int check(Var x) const {
    if (x.id < 0 || x.id >= static_cast<int>(nodes_.size()))
      throw std::logic_error("tape: invalid variable");
    return x.id;
  }

  Var push(Tensor value, Tensor* sink, std::function<void(const Tensor&, int)> back) {
    Node n;
    n.value = std::move(value);
    n.sink = sink;
    n.backward = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Tensor& grad_buf(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Tensor(n.value.rows, n.value.cols);
    return n.grad;
  }

  // grad_a += c * g, folding broadcast dimensions.
  void accumulate_scaled(int ia, const Tensor& g, double c) {
    Tensor& ga = grad_buf(ia);
    const Tensor& av = nodes_[ia].value;
    if (av.rows == g.rows && av.cols == g.cols) {
      for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += c * g.v[i];
      return;
    }
    for (int i = 0; i < g.rows; ++i)
      for (int j = 0; j < g.cols; ++j)
        ga.at(av.rows == 1 ? 0 : i, av.cols == 1 ? 0 : j) += c * g.at(i, j);
  }

  static void broadcast_shape(const Tensor& a, const Tensor& b, int& r, int& c) {
    r = std::max(a.rows, b.rows);
    c = std::max(a.cols, b.cols);
    const bool ok = (a.rows == r || a.rows == 1) && (b.rows == r || b.rows == 1) &&
                    (a.cols == c || a.cols == 1) && (b.cols == c || b.cols == 1);
    if (!ok) throw std::logic_error("broadcast: incompatible shapes");
  }

  static double pick(const Tensor& t, int i, int j) {
    return t.at(t.rows == 1 ? 0 : i, t.cols == 1 ? 0 : j);
  }

  Var binary(Var a, Var b, BinOp op) {
    const Tensor& av = nodes_[check(a)].value;
    const Tensor& bv = nodes_[check(b)].value;
    int r, c;
    broadcast_shape(av, bv, r, c);
    Tensor out(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) {
        const double x = pick(av, i, j), y = pick(bv, i, j);
        double z = 0.0;
        switch (op) {
          case BinOp::kAdd: z = x + y; break;
          case BinOp::kSub: z = x - y; break;
          case BinOp::kMul: z = x * y; break;
          case BinOp::kDiv: z = x / y; break;
        }
        out.at(i, j) = z;
      }
    const int ia = a.id, ib = b.id;
    return push(std::move(out), nullptr, [this, ia, ib, op](const Tensor& g, int self) {
      const Tensor& x = nodes_[ia].value;
      const Tensor& y = nodes_[ib].value;
      Tensor& gx = grad_buf(ia);
      Tensor& gy = grad_buf(ib);
      const Tensor& z = nodes_[self].value;
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) {
          const double go = g.at(i, j);
          double dx = 0.0, dy = 0.0;
          switch (op) {
            case BinOp::kAdd:
              dx = go;
              dy = go;
              break;
            case BinOp::kSub:
              dx = go;
              dy = -go;
              break;
            case BinOp::kMul:
              dx = go * pick(y, i, j);
              dy = go * pick(x, i, j);
              break;
            case BinOp::kDiv: {
              const double yv = pick(y, i, j);
              dx = go / yv;
              dy = -go * z.at(i, j) / yv;
              break;
            }
          }
          gx.at(x.rows == 1 ? 0 : i, x.cols == 1 ? 0 : j) += dx;
          gy.at(y.rows == 1 ? 0 : i, y.cols == 1 ? 0 : j) += dy;
        }
    });
  }
};

}  // namespace tceq::ad
