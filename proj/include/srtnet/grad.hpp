#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "srtnet/common.hpp"

namespace srtnet {

// Reverse-mode autodiff over dense n-d arrays, dynamic tape. A Tensor is a
// shared handle to a node; ops record a backward closure on the result when
// gradients are enabled and some input requires them. Forward outputs never
// alias input storage.

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// RAII guard disabling tape recording (inference paths).
struct NoGrad {
  NoGrad() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGrad() { detail::grad_mode() = prev_; }

 private:
  bool prev_;
};

struct TensorNode {
  std::vector<int> shape;
  std::vector<real> data;
  std::vector<real> grad;  // allocated lazily, same length as data
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backfn;

  std::size_t numel() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), real(0));
  }
};

class Tensor {
 public:
  Tensor() : node_(std::make_shared<TensorNode>()) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    Tensor t;
    std::size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw Error("Tensor: non-positive dimension");
      n *= static_cast<std::size_t>(d);
    }
    t.node_->shape = std::move(shape);
    t.node_->data.assign(n, real(0));
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(std::vector<real> data, std::vector<int> shape,
                     bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    if (data.size() != t.numel()) throw Error("Tensor::from: data/shape mismatch");
    t.node_->data = std::move(data);
    return t;
  }

  static Tensor scalar(real v, bool requires_grad = false) {
    return from({v}, {1}, requires_grad);
  }

  const std::vector<int>& shape() const { return node_->shape; }
  std::vector<real>& data() { return node_->data; }
  const std::vector<real>& data() const { return node_->data; }
  std::vector<real>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool requires_grad() const { return node_->requires_grad; }
  std::size_t numel() const { return node_->data.size(); }
  real item() const {
    if (numel() != 1) throw Error("Tensor::item: not a scalar");
    return node_->data[0];
  }
  void zero_grad() { node_->grad.assign(node_->data.size(), real(0)); }

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<TensorNode> node_;
  friend Tensor make_result(std::vector<int>, std::vector<Tensor>,
                            std::function<void(TensorNode&)>);
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i)
    out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                " vs " + shape_str(b.shape()));
}

inline Tensor make_result(std::vector<int> shape, std::vector<Tensor> parents,
                          std::function<void(TensorNode&)> backfn) {
  Tensor out = Tensor::zeros(std::move(shape));
  bool track = detail::grad_mode() &&
               std::any_of(parents.begin(), parents.end(), [](const Tensor& p) {
                 return p.requires_grad();
               });
  if (track) {
    out.node()->requires_grad = true;
    for (auto& p : parents) out.node()->parents.push_back(p.node());
    out.node()->backfn = std::move(backfn);
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Tensor out = make_result(a.shape(), {a, b}, [an = a.node(), bn = b.node()](TensorNode& o) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < o.data.size(); ++i) an->grad[i] += o.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < o.data.size(); ++i) bn->grad[i] += o.grad[i];
    }
  });
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  Tensor out = make_result(a.shape(), {a, b}, [an = a.node(), bn = b.node()](TensorNode& o) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < o.data.size(); ++i) an->grad[i] += o.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < o.data.size(); ++i) bn->grad[i] -= o.grad[i];
    }
  });
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data()[i] = a.data()[i] - b.data()[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Tensor out = make_result(a.shape(), {a, b}, [an = a.node(), bn = b.node()](TensorNode& o) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < o.data.size(); ++i)
        an->grad[i] += o.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < o.data.size(); ++i)
        bn->grad[i] += o.grad[i] * an->data[i];
    }
  });
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

inline Tensor scale(const Tensor& a, real s) {
  Tensor out = make_result(a.shape(), {a}, [an = a.node(), s](TensorNode& o) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < o.data.size(); ++i) an->grad[i] += o.grad[i] * s;
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] * s;
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out = make_result(a.shape(), {a}, [an = a.node()](TensorNode& o) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < o.data.size(); ++i)
      if (an->data[i] > real(0)) an->grad[i] += o.grad[i];
  });
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data()[i] = std::max(a.data()[i], real(0));
  return out;
}

inline Tensor tanh_op(const Tensor& a) {
  Tensor out = make_result(a.shape(), {a}, [an = a.node()](TensorNode& o) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < o.data.size(); ++i) {
      real y = o.data[i];
      an->grad[i] += o.grad[i] * (real(1) - y * y);
    }
  });
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data()[i] = std::tanh(a.data()[i]);
  return out;
}

inline Tensor sum(const Tensor& a) {
  Tensor out = make_result({1}, {a}, [an = a.node()](TensorNode& o) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < an->data.size(); ++i) an->grad[i] += o.grad[0];
  });
  out.data()[0] = std::accumulate(a.data().begin(), a.data().end(), real(0));
  return out;
}

inline Tensor mean(const Tensor& a) {
  real inv = real(1) / static_cast<real>(a.numel());
  Tensor out = make_result({1}, {a}, [an = a.node(), inv](TensorNode& o) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < an->data.size(); ++i)
      an->grad[i] += o.grad[0] * inv;
  });
  out.data()[0] = std::accumulate(a.data().begin(), a.data().end(), real(0)) * inv;
  return out;
}

// Mean squared error, scalar output.
inline Tensor mse(const Tensor& a, const Tensor& b) {
  check_same_shape("mse", a, b);
  real inv = real(1) / static_cast<real>(a.numel());
  Tensor out = make_result({1}, {a, b}, [an = a.node(), bn = b.node(), inv](TensorNode& o) {
    for (std::size_t i = 0; i < an->data.size(); ++i) {
      real d = real(2) * inv * (an->data[i] - bn->data[i]) * o.grad[0];
      if (an->requires_grad) {
        an->ensure_grad();
        an->grad[i] += d;
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        bn->grad[i] -= d;
      }
    }
  });
  real acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    real d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  out.data()[0] = acc * inv;
  return out;
}

// Fully connected layer: x [in], W [out,in], b [out] -> y [out].
inline Tensor dense(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (x.shape().size() != 1 || W.shape().size() != 2 || b.shape().size() != 1 ||
      W.shape()[1] != x.shape()[0] || W.shape()[0] != b.shape()[0])
    throw Error("dense: shape mismatch x" + shape_str(x.shape()) + " W" +
                shape_str(W.shape()) + " b" + shape_str(b.shape()));
  int in = x.shape()[0], outn = W.shape()[0];
  Tensor out = make_result({outn}, {x, W, b},
                           [xn = x.node(), Wn = W.node(), bn = b.node(), in,
                            outn](TensorNode& o) {
    for (int r = 0; r < outn; ++r) {
      real g = o.grad[r];
      if (Wn->requires_grad) {
        Wn->ensure_grad();
        for (int c = 0; c < in; ++c) Wn->grad[r * in + c] += g * xn->data[c];
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (int c = 0; c < in; ++c) xn->grad[c] += g * Wn->data[r * in + c];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        bn->grad[r] += g;
      }
    }
  });
  for (int r = 0; r < outn; ++r) {
    real acc = b.data()[r];
    const real* w = W.data().data() + static_cast<std::size_t>(r) * in;
    for (int c = 0; c < in; ++c) acc += w[c] * x.data()[c];
    out.data()[r] = acc;
  }
  return out;
}

// 1-D convolution, stride 1, zero padding preserving length, optional
// dilation. x [Cin,T] (or [T] as [1,T]), w [Cout,Cin,K] with K odd, b [Cout].
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b,
                     int dilation = 1) {
  std::vector<int> xs = x.shape();
  if (xs.size() == 1) xs = {1, xs[0]};
  if (xs.size() != 2 || w.shape().size() != 3 || b.shape().size() != 1)
    throw Error("conv1d: bad ranks x" + shape_str(x.shape()) + " w" +
                shape_str(w.shape()));
  int cin = xs[0], T = xs[1];
  int cout = w.shape()[0], K = w.shape()[2];
  if (w.shape()[1] != cin || b.shape()[0] != cout)
    throw Error("conv1d: shape mismatch x" + shape_str(x.shape()) + " w" +
                shape_str(w.shape()) + " b" + shape_str(b.shape()));
  if (K % 2 == 0) throw Error("conv1d: kernel length must be odd");
  if (dilation < 1) throw Error("conv1d: dilation must be >= 1");
  int half = K / 2;

  Tensor out = make_result({cout, T}, {x, w, b},
                           [xn = x.node(), wn = w.node(), bn = b.node(), cin, T,
                            cout, K, half, dilation](TensorNode& o) {
    bool gx = xn->requires_grad, gw = wn->requires_grad, gb = bn->requires_grad;
    if (gx) xn->ensure_grad();
    if (gw) wn->ensure_grad();
    if (gb) bn->ensure_grad();
    for (int co = 0; co < cout; ++co) {
      const real* __restrict og = o.grad.data() + static_cast<std::size_t>(co) * T;
      if (gb) {
        // split accumulators so the reduction vectorizes
        real a0 = 0, a1 = 0, a2 = 0, a3 = 0;
        int t = 0;
        for (; t + 4 <= T; t += 4) {
          a0 += og[t]; a1 += og[t + 1]; a2 += og[t + 2]; a3 += og[t + 3];
        }
        real acc = (a0 + a1) + (a2 + a3);
        for (; t < T; ++t) acc += og[t];
        bn->grad[co] += acc;
      }
      for (int ci = 0; ci < cin; ++ci) {
        const real* __restrict xr = xn->data.data() + static_cast<std::size_t>(ci) * T;
        real* __restrict xg = gx ? xn->grad.data() + static_cast<std::size_t>(ci) * T : nullptr;
        std::size_t wbase = (static_cast<std::size_t>(co) * cin + ci) * K;
        for (int k = 0; k < K; ++k) {
          int off = (k - half) * dilation;
          int lo = std::max(0, -off), hi = std::min(T, T - off);
          if (gw) {
            const real* __restrict xo = xr + off;
            real a0 = 0, a1 = 0, a2 = 0, a3 = 0;
            int t = lo;
            for (; t + 4 <= hi; t += 4) {
              a0 += og[t] * xo[t];
              a1 += og[t + 1] * xo[t + 1];
              a2 += og[t + 2] * xo[t + 2];
              a3 += og[t + 3] * xo[t + 3];
            }
            real acc = (a0 + a1) + (a2 + a3);
            for (; t < hi; ++t) acc += og[t] * xo[t];
            wn->grad[wbase + k] += acc;
          }
          if (gx) {
            real wv = wn->data[wbase + k];
            for (int t = lo; t < hi; ++t) xg[t + off] += og[t] * wv;
          }
        }
      }
    }
  });

  for (int co = 0; co < cout; ++co) {
    real* __restrict orow = out.data().data() + static_cast<std::size_t>(co) * T;
    real bias = b.data()[co];
    for (int t = 0; t < T; ++t) orow[t] = bias;
    for (int ci = 0; ci < cin; ++ci) {
      const real* __restrict xr = x.data().data() + static_cast<std::size_t>(ci) * T;
      const real* wr = w.data().data() + (static_cast<std::size_t>(co) * cin + ci) * K;
      for (int k = 0; k < K; ++k) {
        int off = (k - half) * dilation;
        int lo = std::max(0, -off), hi = std::min(T, T - off);
        real wv = wr[k];
        for (int t = lo; t < hi; ++t) orow[t] += wv * xr[t + off];
      }
    }
  }
  return out;
}

// Adds a per-channel vector v [C] to every time step of x [C,T].
inline Tensor add_channel_bias(const Tensor& x, const Tensor& v) {
  if (x.shape().size() != 2 || v.shape().size() != 1 || x.shape()[0] != v.shape()[0])
    throw Error("add_channel_bias: shape mismatch x" + shape_str(x.shape()) +
                " v" + shape_str(v.shape()));
  int C = x.shape()[0], T = x.shape()[1];
  Tensor out = make_result({C, T}, {x, v}, [xn = x.node(), vn = v.node(), C, T](TensorNode& o) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < o.data.size(); ++i) xn->grad[i] += o.grad[i];
    }
    if (vn->requires_grad) {
      vn->ensure_grad();
      for (int c = 0; c < C; ++c) {
        real acc = 0;
        const real* og = o.grad.data() + static_cast<std::size_t>(c) * T;
        for (int t = 0; t < T; ++t) acc += og[t];
        vn->grad[c] += acc;
      }
    }
  });
  for (int c = 0; c < C; ++c)
    for (int t = 0; t < T; ++t)
      out.data()[static_cast<std::size_t>(c) * T + t] =
          x.data()[static_cast<std::size_t>(c) * T + t] + v.data()[c];
  return out;
}

// Backpropagates d(loss)/d(tensor) into every reachable requires_grad tensor.
// Gradients accumulate across calls until zero_grad/optimizer reset.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw Error("backward: loss must be scalar");
  if (!loss.requires_grad())
    throw Error("backward: loss is detached from any parameter");

  // Iterative post-order topo sort.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorNode* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // Interior grads are scratch space per backward pass; only leaves accumulate.
  for (TensorNode* n : order)
    if (n->backfn && !n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), real(0));
  loss.node()->ensure_grad();
  loss.node()->grad[0] += real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backfn) {
      n->ensure_grad();
      n->backfn(*n);
    }
  }
}

// ---------------------------------------------------------------------------
// Adam with bias correction. step() consumes and clears gradients.

struct AdamConfig {
  real lr = real(2e-4);
  real beta1 = real(0.9);
  real beta2 = real(0.999);
  real eps_stab = real(1e-8);
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    for (auto& p : params_) {
      m_.emplace_back(p.numel(), real(0));
      v_.emplace_back(p.numel(), real(0));
    }
  }

  void step() {
    ++steps_;
    real bc1 = real(1) - std::pow(cfg_.beta1, static_cast<real>(steps_));
    real bc2 = real(1) - std::pow(cfg_.beta2, static_cast<real>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].data();
      auto& g = params_[i].grad();
      for (std::size_t j = 0; j < p.size(); ++j) {
        m_[i][j] = cfg_.beta1 * m_[i][j] + (real(1) - cfg_.beta1) * g[j];
        v_[i][j] = cfg_.beta2 * v_[i][j] + (real(1) - cfg_.beta2) * g[j] * g[j];
        real mh = m_[i][j] / bc1;
        real vh = v_[i][j] / bc2;
        p[j] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps_stab);
      }
      params_[i].zero_grad();
    }
  }

  long steps() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  long steps_ = 0;
  std::vector<std::vector<real>> m_, v_;
};

}  // namespace srtnet
