#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace srtnet {

// Build-wide training precision. Schedule math is always double.
#ifdef SRTNET_REAL32
using real = float;
#else
using real = double;
#endif

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Mono time-domain signal.
struct Waveform {
  std::vector<real> samples;
  int sample_rate = 0;

  std::size_t size() const { return samples.size(); }
  real& operator[](std::size_t i) { return samples[i]; }
  real operator[](std::size_t i) const { return samples[i]; }
};

inline bool all_finite(const Waveform& w) {
  for (real v : w.samples)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

// Deterministic random source. The uniform and normal transforms are spelled
// out here (rather than using std::*_distribution) so that a given seed
// produces the same stream on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

  std::uint64_t next_u64() {
    // xorshift* variant seeded through splitmix64.
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform on {0, ..., n-1}.
  std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller, one spare cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Independent child stream, for fan-out with a master seed.
  Rng fork(std::uint64_t stream) {
    std::uint64_t z = state_ ^ (0x2545f4914f6cdd1dULL * (stream + 1));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    return Rng(z ^ (z >> 27));
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace srtnet
