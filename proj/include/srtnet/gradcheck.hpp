#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "srtnet/common.hpp"
#include "srtnet/grad.hpp"
#include "srtnet/nets.hpp"

namespace srtnet {

// Central finite-difference verification of the tape. Meaningful at 64-bit
// precision; h = 1e-4 and relative error measured against max(1, |fd|).

namespace fd {

inline void randomize(Tensor& t, Rng& rng, double scale = 1.0) {
  for (auto& v : t.data()) v = static_cast<real>(rng.uniform(-scale, scale));
}

// Max relative error between analytic gradients of `loss_fn` w.r.t. `params`
// and central differences.
inline double check(const std::function<Tensor()>& loss_fn,
                    std::vector<Tensor> params, double h = 1e-4) {
  for (auto& p : params) p.zero_grad();
  Tensor loss = loss_fn();
  backward(loss);
  double max_rel = 0.0;
  for (auto& p : params) {
    std::vector<real> analytic = p.grad();
    for (std::size_t i = 0; i < p.numel(); ++i) {
      real saved = p.data()[i];
      p.data()[i] = saved + static_cast<real>(h);
      double up;
      {
        NoGrad ng;
        up = static_cast<double>(loss_fn().item());
      }
      p.data()[i] = saved - static_cast<real>(h);
      double down;
      {
        NoGrad ng;
        down = static_cast<double>(loss_fn().item());
      }
      p.data()[i] = saved;
      double fdg = (up - down) / (2.0 * h);
      double rel = std::abs(static_cast<double>(analytic[i]) - fdg) /
                   std::max(1.0, std::abs(fdg));
      max_rel = std::max(max_rel, rel);
    }
    p.zero_grad();
  }
  return max_rel;
}

}  // namespace fd

// Per-op randomized checks plus full-network checks; returns the max relative
// error across everything.
inline double gradcheck_all(std::uint64_t seed, int n_shapes = 10) {
  Rng rng(seed + 1);
  double worst = 0.0;
  auto probe = [&](std::function<Tensor()> f, std::vector<Tensor> ps) {
    worst = std::max(worst, fd::check(f, std::move(ps)));
  };

  for (int it = 0; it < n_shapes; ++it) {
    int n = 2 + static_cast<int>(rng.uniform_int(6));
    Tensor a = Tensor::zeros({n}, true);
    Tensor b = Tensor::zeros({n}, true);
    fd::randomize(a, rng);
    fd::randomize(b, rng);
    probe([&] { return sum(mul(add(a, b), sub(a, b))); }, {a, b});
    probe([&] { return mean(relu(scale(a, real(1.7)))); }, {a});
    probe([&] { return sum(tanh_op(a)); }, {a});
    probe([&] { return mse(a, b); }, {a, b});

    int in = 2 + static_cast<int>(rng.uniform_int(4));
    int out = 2 + static_cast<int>(rng.uniform_int(4));
    Tensor x = Tensor::zeros({in}, true);
    Tensor W = Tensor::zeros({out, in}, true);
    Tensor bias = Tensor::zeros({out}, true);
    fd::randomize(x, rng);
    fd::randomize(W, rng);
    fd::randomize(bias, rng);
    probe([&] { return sum(tanh_op(dense(x, W, bias))); }, {x, W, bias});

    int cin = 1 + static_cast<int>(rng.uniform_int(3));
    int cout = 1 + static_cast<int>(rng.uniform_int(3));
    int T = 5 + static_cast<int>(rng.uniform_int(8));
    int K = 3 + 2 * static_cast<int>(rng.uniform_int(2));
    int dil = 1 + static_cast<int>(rng.uniform_int(3));
    Tensor cx = Tensor::zeros({cin, T}, true);
    Tensor cw = Tensor::zeros({cout, cin, K}, true);
    Tensor cb = Tensor::zeros({cout}, true);
    fd::randomize(cx, rng);
    fd::randomize(cw, rng);
    fd::randomize(cb, rng);
    probe([&] { return sum(tanh_op(conv1d(cx, cw, cb, dil))); }, {cx, cw, cb});

    Tensor v = Tensor::zeros({cin}, true);
    fd::randomize(v, rng);
    probe([&] { return sum(mul(add_channel_bias(cx, v), cx)); }, {cx, v});
  }

  // Full networks, small enough to finite-difference in seconds.
  NetConfig cfg;
  cfg.n_blocks = 3;
  cfg.channels = 3;
  cfg.dilation_cycle = {1, 2};
  Rng net_rng = rng.fork(7);
  DetNet det(cfg, net_rng);
  StoNet sto(cfg, net_rng);
  // Randomize every parameter: zero-init heads give zero upstream gradients,
  // and zero biases park relu pre-activations exactly on the kink, where
  // central differences straddle the corner and disagree with the subgradient.
  for (auto& [name, t] : det.params().items) fd::randomize(t, net_rng, 0.3);
  for (auto& [name, t] : sto.params().items) fd::randomize(t, net_rng, 0.3);

  int T = 17;
  Tensor y = Tensor::zeros({1, T});
  Tensor x_t = Tensor::zeros({1, T});
  Tensor target = Tensor::zeros({1, T});
  fd::randomize(y, net_rng);
  fd::randomize(x_t, net_rng);
  fd::randomize(target, net_rng);

  worst = std::max(worst, fd::check([&] { return mse(det.forward(y), target); },
                                   det.params().tensors()));
  worst = std::max(
      worst, fd::check([&] { return mse(sto.forward(x_t, y, 0.7), target); },
                       sto.params().tensors()));
  return worst;
}

}  // namespace srtnet
