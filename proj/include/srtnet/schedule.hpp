#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "srtnet/common.hpp"

namespace srtnet {

// Per-step constants of the conditional diffusion process. All schedule math
// is done in double: delta_tilde suffers catastrophic cancellation near t=1.
//
// Indexing: alpha, alpha_bar, delta_tilde, cx, cy, ce are 1-based over [1,T]
// (index 0 unused); m and delta carry the boundary values m[0]=0, delta[0]=0.
struct DiscreteSchedule {
  int T = 0;
  std::vector<double> alpha;        // [0..T], alpha[0] unused
  std::vector<double> alpha_bar;    // [0..T], alpha_bar[0] = 1
  std::vector<double> m;            // [0..T], m[0] = 0
  std::vector<double> delta;        // [0..T], delta[0] = 0
  std::vector<double> delta_tilde;  // [0..T], delta_tilde[1] = 0
  std::vector<double> cx, cy, ce;   // [0..T]
};

// Boundaries of the hierarchical noise-level bands: l[0]=1, l[s]=sqrt(ab[s]).
struct NoiseLevelBands {
  std::vector<double> l;  // [0..S], strictly decreasing
  int S() const { return static_cast<int>(l.size()) - 1; }
};

// Interpolation ratio and variance at a continuous noise level sqrt_alpha_bar.
// m = sqrt((1-ab)/sqrt(ab)); delta = (1-ab) - m^2*ab, which simplifies to
// (1-ab)(1-sqrt(ab)) and is therefore nonnegative on (0,1].
inline std::pair<double, double> continuous_params(double sqrt_alpha_bar) {
  if (!(sqrt_alpha_bar > 0.0) || sqrt_alpha_bar > 1.0)
    throw Error("continuous_params: sqrt_alpha_bar must be in (0,1], got " +
                std::to_string(sqrt_alpha_bar));
  double ab = sqrt_alpha_bar * sqrt_alpha_bar;
  double m = std::sqrt((1.0 - ab) / sqrt_alpha_bar);
  double delta = (1.0 - ab) - m * m * ab;
  if (delta < 0.0) delta = 0.0;  // rounding guard; algebraically >= 0
  return {m, delta};
}

// Reverse-step constants (cx, cy, ce, delta_tilde) at step t.
// t=1 is a removable singularity (delta[0]=0); the analytic limits give the
// standard final denoising step: cx = 1/sqrt(alpha_1), cy = 0,
// ce = sqrt(1-alpha_bar_1)/sqrt(alpha_1), delta_tilde = 0.
struct ReverseRow {
  double cx, cy, ce, delta_tilde;
};

inline ReverseRow reverse_row_from(int t, const std::vector<double>& alpha,
                                   const std::vector<double>& alpha_bar,
                                   const std::vector<double>& m,
                                   const std::vector<double>& delta) {
  int T = static_cast<int>(alpha.size()) - 1;
  if (t < 1 || t > T)
    throw Error("reverse_row: t out of range [1," + std::to_string(T) +
                "]: " + std::to_string(t));
  double at = alpha[t], abt = alpha_bar[t];
  if (t == 1) {
    return {1.0 / std::sqrt(at), 0.0, std::sqrt(1.0 - abt) / std::sqrt(at), 0.0};
  }
  double mt = m[t], mp = m[t - 1];
  double dt = delta[t], dp = delta[t - 1];
  double ratio = (1.0 - mt) / (1.0 - mp);
  double dtil = dp - ratio * ratio * at * dp * dp / dt;
  if (dtil < 0.0) dtil = 0.0;
  double cx = ratio * (dp / dt) * std::sqrt(at) +
              (1.0 - mp) * (dtil / dp) / std::sqrt(at);
  double cy = (mp * dt - mt * (1.0 - mt) / (1.0 - mp) * at * dp) *
              std::sqrt(alpha_bar[t - 1]) / dt;
  double ce = (1.0 - mp) * (dtil / dp) * std::sqrt(1.0 - abt) / std::sqrt(at);
  return {cx, cy, ce, dtil};
}

inline ReverseRow reverse_row(int t, const DiscreteSchedule& s) {
  return reverse_row_from(t, s.alpha, s.alpha_bar, s.m, s.delta);
}

// Builds the full discrete schedule from a linear beta ramp. Validates the
// m_T ~= 1 premise: a schedule with m[T] outside [0.9, 1.1] is rejected.
inline DiscreteSchedule build_schedule(double beta_start, double beta_end, int T) {
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
    throw Error("build_schedule: need 0 < beta_start <= beta_end < 1, got (" +
                std::to_string(beta_start) + ", " + std::to_string(beta_end) + ")");
  if (T < 1) throw Error("build_schedule: T must be >= 1");

  DiscreteSchedule s;
  s.T = T;
  s.alpha.assign(T + 1, 0.0);
  s.alpha_bar.assign(T + 1, 1.0);
  s.m.assign(T + 1, 0.0);
  s.delta.assign(T + 1, 0.0);
  s.delta_tilde.assign(T + 1, 0.0);
  s.cx.assign(T + 1, 0.0);
  s.cy.assign(T + 1, 0.0);
  s.ce.assign(T + 1, 0.0);

  for (int t = 1; t <= T; ++t) {
    double beta = (T == 1) ? beta_start
                           : beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
    s.alpha[t] = 1.0 - beta;
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    auto [mt, dt] = continuous_params(std::sqrt(s.alpha_bar[t]));
    s.m[t] = mt;
    s.delta[t] = dt;
  }
  if (s.m[T] < 0.9 || s.m[T] > 1.1)
    throw Error("build_schedule: m[T] = " + std::to_string(s.m[T]) +
                " outside [0.9, 1.1]; schedule inconsistent with m_T ~= 1");
  for (int t = 1; t <= T; ++t) {
    ReverseRow r = reverse_row(t, s);
    s.cx[t] = r.cx;
    s.cy[t] = r.cy;
    s.ce[t] = r.ce;
    s.delta_tilde[t] = r.delta_tilde;
  }
  return s;
}

// Shipped defaults; frozen after checking the m_T gate (m[50] ~ 0.958).
inline DiscreteSchedule default_schedule() { return build_schedule(1e-4, 0.035, 50); }

inline NoiseLevelBands noise_level_bands(const DiscreteSchedule& s) {
  NoiseLevelBands b;
  b.l.resize(s.T + 1);
  b.l[0] = 1.0;
  for (int t = 1; t <= s.T; ++t) b.l[t] = std::sqrt(s.alpha_bar[t]);
  return b;
}

// Hierarchical draw: pick a band uniformly, then a level uniformly inside it.
// Result lies in the open interval (l[S], 1).
inline double sample_noise_level(const NoiseLevelBands& bands, Rng& rng) {
  int s = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(bands.S())));
  double lo = bands.l[s], hi = bands.l[s - 1];
  double u = rng.uniform();
  if (u <= 0.0) u = 0x1.0p-53;
  return lo + u * (hi - lo);
}

}  // namespace srtnet
