#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "srtnet/common.hpp"
#include "srtnet/grad.hpp"

namespace srtnet {

struct NetConfig {
  int n_blocks = 4;
  int channels = 16;
  std::vector<int> dilation_cycle = {1, 2, 4, 8};
  int kernel_size = 3;

  void validate() const {
    if (n_blocks <= 0 || channels <= 0 || kernel_size <= 0 || kernel_size % 2 == 0)
      throw Error("NetConfig: counts must be positive and kernel odd");
    if (dilation_cycle.empty()) throw Error("NetConfig: empty dilation cycle");
    for (int d : dilation_cycle)
      if (d <= 0) throw Error("NetConfig: non-positive dilation");
  }
};

constexpr int kNoiseEmbeddingDim = 128;

// Sinusoidal encoding of the continuous noise level: 64 sine terms followed
// by 64 cosine terms at frequencies 10^(4k/63), k = 0..63.
inline std::array<double, kNoiseEmbeddingDim> encode_noise_level(double sqrt_alpha_bar) {
  if (!(sqrt_alpha_bar > 0.0) || sqrt_alpha_bar > 1.0)
    throw Error("encode_noise_level: level must be in (0,1], got " +
                std::to_string(sqrt_alpha_bar));
  std::array<double, kNoiseEmbeddingDim> e;
  for (int k = 0; k < 64; ++k) {
    double w = std::pow(10.0, 4.0 * k / 63.0) * sqrt_alpha_bar;
    e[k] = std::sin(w);
    e[64 + k] = std::cos(w);
  }
  return e;
}

// Named parameter collection, in registration order (checkpoint manifest order).
struct ParamMap {
  std::vector<std::pair<std::string, Tensor>> items;

  Tensor& add(const std::string& name, Tensor t) {
    items.emplace_back(name, std::move(t));
    return items.back().second;
  }
  Tensor& at(const std::string& name) {
    for (auto& [n, t] : items)
      if (n == name) return t;
    throw Error("ParamMap: no parameter named " + name);
  }
  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    out.reserve(items.size());
    for (auto& [n, t] : items) out.push_back(t);
    return out;
  }
  std::size_t total_count() const {
    std::size_t n = 0;
    for (auto& [name, t] : items) n += t.numel();
    return n;
  }
};

namespace detail {
inline Tensor init_weight(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t = Tensor::zeros(shape, true);
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<real>(rng.uniform(-bound, bound));
  return t;
}
}  // namespace detail

// Dilated residual conv stack shared by both modules. Per block:
//   h -> dilated conv (C->C, k) [-> + noise-emb projection + conditioner conv,
//   stochastic only] -> tanh -> 1x1 conv -> + h
// Input projection 1->C, output head relu -> 1x1 (C->C) -> 1x1 (C->1).
// Both output head final projections are zero-initialized, so a fresh network
// computes the zero function.
class ResNet {
 public:
  ResNet(const NetConfig& cfg, Rng& rng, bool conditioned, const std::string& prefix)
      : cfg_(cfg), conditioned_(conditioned) {
    cfg.validate();
    int C = cfg.channels, K = cfg.kernel_size;
    params_.add(prefix + ".in.w", detail::init_weight({C, 1, K}, K, rng));
    params_.add(prefix + ".in.b", Tensor::zeros({C}, true));
    for (int i = 0; i < cfg.n_blocks; ++i) {
      std::string b = prefix + ".block" + std::to_string(i);
      params_.add(b + ".dil.w", detail::init_weight({C, C, K}, C * K, rng));
      params_.add(b + ".dil.b", Tensor::zeros({C}, true));
      if (conditioned_) {
        params_.add(b + ".emb.w",
                    detail::init_weight({C, kNoiseEmbeddingDim}, kNoiseEmbeddingDim, rng));
        params_.add(b + ".emb.b", Tensor::zeros({C}, true));
        params_.add(b + ".cond.w", detail::init_weight({C, 1, 1}, 1, rng));
        params_.add(b + ".cond.b", Tensor::zeros({C}, true));
      }
      params_.add(b + ".out.w", detail::init_weight({C, C, 1}, C, rng));
      params_.add(b + ".out.b", Tensor::zeros({C}, true));
    }
    params_.add(prefix + ".head.w", detail::init_weight({C, C, 1}, C, rng));
    params_.add(prefix + ".head.b", Tensor::zeros({C}, true));
    params_.add(prefix + ".proj.w", Tensor::zeros({1, C, 1}, true));  // zero init
    params_.add(prefix + ".proj.b", Tensor::zeros({1}, true));
  }

  // Unconditioned forward. x: [T] or [1,T]; returns [1,T].
  Tensor forward(const Tensor& x) {
    if (conditioned_) throw Error("ResNet: conditioned net needs level and y0");
    return run(x, nullptr, nullptr);
  }

  // Conditioned forward: noise-level embedding plus conditioner waveform y0.
  Tensor forward(const Tensor& x, const Tensor& y0, double sqrt_alpha_bar) {
    if (!conditioned_) throw Error("ResNet: unconditioned net takes no condition");
    auto enc = encode_noise_level(sqrt_alpha_bar);
    std::vector<real> ev(enc.begin(), enc.end());
    Tensor emb = Tensor::from(std::move(ev), {kNoiseEmbeddingDim});
    return run(x, &emb, &y0);
  }

  ParamMap& params() { return params_; }
  const NetConfig& config() const { return cfg_; }
  bool conditioned() const { return conditioned_; }

 private:
  Tensor run(const Tensor& x, const Tensor* emb, const Tensor* y0) {
    Tensor h = conv1d(x, p("in.w"), p("in.b"));
    for (int i = 0; i < cfg_.n_blocks; ++i) {
      std::string b = "block" + std::to_string(i);
      int dil = cfg_.dilation_cycle[i % cfg_.dilation_cycle.size()];
      Tensor z = conv1d(h, p(b + ".dil.w"), p(b + ".dil.b"), dil);
      if (conditioned_) {
        Tensor ev = dense(*emb, p(b + ".emb.w"), p(b + ".emb.b"));
        z = add_channel_bias(z, ev);
        z = add(z, conv1d(*y0, p(b + ".cond.w"), p(b + ".cond.b")));
      }
      z = tanh_op(z);
      z = conv1d(z, p(b + ".out.w"), p(b + ".out.b"));
      h = add(h, z);
    }
    Tensor o = relu(h);
    o = conv1d(o, p("head.w"), p("head.b"));
    o = relu(o);
    return conv1d(o, p("proj.w"), p("proj.b"));
  }

  Tensor& p(const std::string& suffix) { return params_.at(prefix_of() + suffix); }
  std::string prefix_of() const {
    return params_.items.front().first.substr(0, params_.items.front().first.find('.') + 1);
  }

  NetConfig cfg_;
  bool conditioned_;
  ParamMap params_;
};

// Closed-form parameter count for a ResNet with the given config; kept in
// sync with the constructor by a unit test.
inline std::size_t param_count(const NetConfig& cfg, bool conditioned) {
  std::size_t C = cfg.channels, K = cfg.kernel_size;
  std::size_t per_block = C * C * K + C + C * C + C;  // dilated + 1x1 out
  if (conditioned)
    per_block += C * kNoiseEmbeddingDim + C + C * 1 * 1 + C;  // emb proj + cond
  std::size_t n = C * 1 * K + C;                          // input proj
  n += static_cast<std::size_t>(cfg.n_blocks) * per_block;
  n += C * C + C;  // head 1x1
  n += C + 1;      // output proj
  return n;
}

inline Tensor waveform_tensor(const Waveform& w, bool requires_grad = false) {
  return Tensor::from(w.samples, {1, static_cast<int>(w.samples.size())}, requires_grad);
}

inline Waveform tensor_waveform(const Tensor& t, int sample_rate) {
  return Waveform{t.data(), sample_rate};
}

// Deterministic module: no conditioner, no noise level.
class DetNet {
 public:
  DetNet(const NetConfig& cfg, Rng& rng) : net_(cfg, rng, false, "det") {}

  Tensor forward(const Tensor& y) { return net_.forward(y); }

  Waveform forward(const Waveform& y) {
    if (!all_finite(y)) throw Error("det_forward: non-finite input sample");
    NoGrad ng;
    return tensor_waveform(net_.forward(waveform_tensor(y)), y.sample_rate);
  }

  ParamMap& params() { return net_.params(); }
  const NetConfig& config() const { return net_.config(); }

 private:
  ResNet net_;
};

// Stochastic denoiser: predicts the combined noise at a given level,
// conditioned on the residual noisy signal y0.
class StoNet {
 public:
  StoNet(const NetConfig& cfg, Rng& rng) : net_(cfg, rng, true, "sto") {}

  Tensor forward(const Tensor& x_t, const Tensor& y0, double sqrt_alpha_bar) {
    if (x_t.numel() != y0.numel())
      throw Error("sto_forward: length mismatch " + std::to_string(x_t.numel()) +
                  " vs " + std::to_string(y0.numel()));
    return net_.forward(x_t, y0, sqrt_alpha_bar);
  }

  Waveform forward(const Waveform& x_t, const Waveform& y0, double sqrt_alpha_bar) {
    NoGrad ng;
    Tensor out = forward(waveform_tensor(x_t), waveform_tensor(y0), sqrt_alpha_bar);
    return tensor_waveform(out, x_t.sample_rate);
  }

  ParamMap& params() { return net_.params(); }
  const NetConfig& config() const { return net_.config(); }

 private:
  ResNet net_;
};

}  // namespace srtnet
