#pragma once

#include <cmath>
#include <functional>

#include "srtnet/common.hpp"
#include "srtnet/grad.hpp"
#include "srtnet/nets.hpp"
#include "srtnet/schedule.hpp"

namespace srtnet {

// Residual signals the diffusion operates on: x0 = x - y_init, y0 = y - y_init.
struct ResidualPair {
  Waveform x0;
  Waveform y0;

  void validate() const {
    if (x0.size() != y0.size())
      throw Error("ResidualPair: length mismatch " + std::to_string(x0.size()) +
                  " vs " + std::to_string(y0.size()));
  }
};

namespace detail {
inline void check_len(const char* op, std::size_t a, std::size_t b) {
  if (a != b)
    throw Error(std::string(op) + ": length mismatch " + std::to_string(a) +
                " vs " + std::to_string(b));
}
}  // namespace detail

// x_t = (1-m) sqrt(ab) x0 + m sqrt(ab) y0 + sqrt(delta) eps.
inline Waveform forward_sample(const ResidualPair& pair, double sqrt_alpha_bar,
                               const Waveform& eps) {
  pair.validate();
  detail::check_len("forward_sample", pair.x0.size(), eps.size());
  auto [m, delta] = continuous_params(sqrt_alpha_bar);
  double a = (1.0 - m) * sqrt_alpha_bar;
  double b = m * sqrt_alpha_bar;
  double c = std::sqrt(delta);
  Waveform out{std::vector<real>(eps.size()), pair.x0.sample_rate};
  for (std::size_t i = 0; i < eps.size(); ++i)
    out[i] = static_cast<real>(a * pair.x0[i] + b * pair.y0[i] + c * eps[i]);
  return out;
}

// eps* = (m sqrt(ab)/sqrt(1-ab)) (y0 - x0) + (sqrt(delta)/sqrt(1-ab)) eps.
// The level 1 endpoint is rejected: sqrt(1-ab) vanishes there.
inline Waveform combined_noise(const ResidualPair& pair, double sqrt_alpha_bar,
                               const Waveform& eps) {
  pair.validate();
  detail::check_len("combined_noise", pair.x0.size(), eps.size());
  if (sqrt_alpha_bar >= 1.0)
    throw Error("combined_noise: level must be < 1 (sqrt(1-alpha_bar) = 0)");
  auto [m, delta] = continuous_params(sqrt_alpha_bar);
  double ab = sqrt_alpha_bar * sqrt_alpha_bar;
  double root = std::sqrt(1.0 - ab);
  double a = m * sqrt_alpha_bar / root;
  double b = std::sqrt(delta) / root;
  Waveform out{std::vector<real>(eps.size()), pair.x0.sample_rate};
  for (std::size_t i = 0; i < eps.size(); ++i)
    out[i] = static_cast<real>(a * (pair.y0[i] - pair.x0[i]) + b * eps[i]);
  return out;
}

// Tensor-path variants used by the training loop, where x0/y0 carry gradients
// back into the deterministic module.
inline Tensor forward_sample_t(const Tensor& x0, const Tensor& y0,
                               double sqrt_alpha_bar, const Tensor& eps) {
  auto [m, delta] = continuous_params(sqrt_alpha_bar);
  Tensor out = add(scale(x0, static_cast<real>((1.0 - m) * sqrt_alpha_bar)),
                   scale(y0, static_cast<real>(m * sqrt_alpha_bar)));
  return add(out, scale(eps, static_cast<real>(std::sqrt(delta))));
}

inline Tensor combined_noise_t(const Tensor& x0, const Tensor& y0,
                               double sqrt_alpha_bar, const Tensor& eps) {
  if (sqrt_alpha_bar >= 1.0)
    throw Error("combined_noise: level must be < 1 (sqrt(1-alpha_bar) = 0)");
  auto [m, delta] = continuous_params(sqrt_alpha_bar);
  double ab = sqrt_alpha_bar * sqrt_alpha_bar;
  double root = std::sqrt(1.0 - ab);
  Tensor out = scale(sub(y0, x0), static_cast<real>(m * sqrt_alpha_bar / root));
  return add(out, scale(eps, static_cast<real>(std::sqrt(delta) / root)));
}

// Mean squared objective between predicted and combined noise.
inline double training_loss(const Waveform& eps_hat, const Waveform& eps_star) {
  detail::check_len("training_loss", eps_hat.size(), eps_star.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < eps_hat.size(); ++i) {
    double d = static_cast<double>(eps_hat[i]) - static_cast<double>(eps_star[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(eps_hat.size());
}

// x_T ~ N(sqrt(alpha_bar_T) y0, delta_T I).
inline Waveform init_reverse(const Waveform& y0, const DiscreteSchedule& sched,
                             Rng& rng) {
  double mean_coef = std::sqrt(sched.alpha_bar[sched.T]);
  double sd = std::sqrt(sched.delta[sched.T]);
  Waveform out{std::vector<real>(y0.size()), y0.sample_rate};
  for (std::size_t i = 0; i < y0.size(); ++i)
    out[i] = static_cast<real>(mean_coef * y0[i] + sd * rng.normal());
  return out;
}

// One reverse transition:
//   x_{t-1} = cx x_t + cy y0 - ce eps_hat + sqrt(delta_tilde_t) z,
// with z = 0 at t = 1 (delta_tilde_1 = 0).
inline Waveform reverse_step(const Waveform& x_t, const Waveform& y0, int t,
                             const Waveform& eps_hat, const DiscreteSchedule& sched,
                             Rng& rng) {
  detail::check_len("reverse_step", x_t.size(), y0.size());
  detail::check_len("reverse_step", x_t.size(), eps_hat.size());
  ReverseRow r = reverse_row(t, sched);
  double sd = std::sqrt(r.delta_tilde);
  Waveform out{std::vector<real>(x_t.size()), x_t.sample_rate};
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    double v = r.cx * x_t[i] + r.cy * y0[i] - r.ce * eps_hat[i];
    if (t > 1) v += sd * rng.normal();
    out[i] = static_cast<real>(v);
  }
  return out;
}

// Reverse chain over an arbitrary initial estimate and conditioner; returns
// the sampled x0 plus add_back. SRTNet wiring: y_init = D(y), y0 = y - y_init,
// add_back = y_init.
inline Waveform run_reverse_chain(StoNet& sto, const Waveform& y0,
                                  const Waveform& add_back,
                                  const DiscreteSchedule& sched, Rng& rng) {
  Waveform x = init_reverse(y0, sched, rng);
  for (int t = sched.T; t >= 1; --t) {
    Waveform eps_hat = sto.forward(x, y0, std::sqrt(sched.alpha_bar[t]));
    x = reverse_step(x, y0, t, eps_hat, sched, rng);
  }
  detail::check_len("run_reverse_chain", x.size(), add_back.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += add_back[i];
  return x;
}

// Full enhance-and-refine sampling: deterministic pass, residual, reverse
// chain, add the initial estimate back.
inline Waveform sample_chain(DetNet& det, StoNet& sto, const Waveform& y,
                             const DiscreteSchedule& sched, Rng& rng) {
  Waveform y_init = det.forward(y);
  Waveform y0{std::vector<real>(y.size()), y.sample_rate};
  for (std::size_t i = 0; i < y.size(); ++i) y0[i] = y[i] - y_init[i];
  return run_reverse_chain(sto, y0, y_init, sched, rng);
}

// Mixes a fraction of the noisy input back into the enhanced signal.
inline Waveform recombine(const Waveform& enhanced, const Waveform& noisy,
                          double ratio) {
  detail::check_len("recombine", enhanced.size(), noisy.size());
  if (ratio < 0.0 || ratio >= 1.0)
    throw Error("recombine: ratio must be in [0,1), got " + std::to_string(ratio));
  Waveform out{std::vector<real>(enhanced.size()), enhanced.sample_rate};
  for (std::size_t i = 0; i < enhanced.size(); ++i)
    out[i] = static_cast<real>((1.0 - ratio) * enhanced[i] + ratio * noisy[i]);
  return out;
}

}  // namespace srtnet
