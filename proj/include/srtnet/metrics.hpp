#pragma once

#include <cmath>
#include <cstddef>

#include "srtnet/common.hpp"

namespace srtnet {

constexpr double kSiSnrCeilingDb = 60.0;

struct MetricReport {
  double si_snr_db = 0.0;
  double seg_snr_db = 0.0;
  int n_frames = 0;
};

// Scale-invariant SNR in dB. Both signals are mean-removed, the estimate is
// projected onto the reference, and the projection-to-residual power ratio is
// reported, capped at +60 dB when the residual underflows.
inline double si_snr(const Waveform& est, const Waveform& ref) {
  if (est.size() != ref.size())
    throw Error("si_snr: length mismatch " + std::to_string(est.size()) + " vs " +
                std::to_string(ref.size()));
  std::size_t n = ref.size();
  double me = 0.0, mr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    me += est[i];
    mr += ref[i];
  }
  me /= n;
  mr /= n;
  double dot = 0.0, rr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double e = est[i] - me, r = ref[i] - mr;
    dot += e * r;
    rr += r * r;
  }
  if (rr <= 0.0) throw Error("si_snr: zero reference");
  double a = dot / rr;
  double target_p = a * a * rr;
  double resid_p = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = (est[i] - me) - a * (ref[i] - mr);
    resid_p += d * d;
  }
  if (resid_p <= target_p * 1e-12 || resid_p == 0.0) return kSiSnrCeilingDb;
  double db = 10.0 * std::log10(target_p / resid_p);
  return std::min(db, kSiSnrCeilingDb);
}

// Segmental SNR: per-frame SNR clamped to [floor, ceil], averaged over frames
// with nonzero reference energy. Trailing partial frames are included.
inline double seg_snr(const Waveform& est, const Waveform& ref, int frame_len = 256,
                      double floor_db = -10.0, double ceil_db = 35.0,
                      int* n_frames_out = nullptr) {
  if (est.size() != ref.size())
    throw Error("seg_snr: length mismatch " + std::to_string(est.size()) + " vs " +
                std::to_string(ref.size()));
  if (frame_len < 1) throw Error("seg_snr: frame_len must be >= 1");
  double acc = 0.0;
  int frames = 0;
  for (std::size_t start = 0; start < ref.size(); start += frame_len) {
    std::size_t end = std::min(ref.size(), start + frame_len);
    double sp = 0.0, np = 0.0;
    for (std::size_t i = start; i < end; ++i) {
      double r = ref[i], d = est[i] - ref[i];
      sp += r * r;
      np += d * d;
    }
    if (sp == 0.0) continue;  // silent reference frame excluded
    double db = (np == 0.0) ? ceil_db : 10.0 * std::log10(sp / np);
    acc += std::min(std::max(db, floor_db), ceil_db);
    ++frames;
  }
  if (frames == 0) throw Error("seg_snr: all-silent reference");
  if (n_frames_out) *n_frames_out = frames;
  return acc / frames;
}

inline MetricReport metric_report(const Waveform& est, const Waveform& ref) {
  MetricReport r;
  r.si_snr_db = si_snr(est, ref);
  r.seg_snr_db = seg_snr(est, ref, 256, -10.0, 35.0, &r.n_frames);
  return r;
}

}  // namespace srtnet
