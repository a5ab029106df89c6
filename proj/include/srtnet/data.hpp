#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "srtnet/common.hpp"

namespace srtnet {

enum class CleanKind { kSineMixture, kChirp, kAmTone };
enum class NoiseKind { kWhite, kPink, kFilteredBurst };

inline std::string to_string(CleanKind k) {
  switch (k) {
    case CleanKind::kSineMixture: return "sine_mixture";
    case CleanKind::kChirp: return "chirp";
    case CleanKind::kAmTone: return "am_tone";
  }
  throw Error("bad CleanKind");
}

inline std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::kWhite: return "white";
    case NoiseKind::kPink: return "pink";
    case NoiseKind::kFilteredBurst: return "filtered_burst";
  }
  throw Error("bad NoiseKind");
}

inline CleanKind clean_kind_from(const std::string& s) {
  if (s == "sine_mixture") return CleanKind::kSineMixture;
  if (s == "chirp") return CleanKind::kChirp;
  if (s == "am_tone") return CleanKind::kAmTone;
  throw Error("unknown clean_kind: " + s);
}

inline NoiseKind noise_kind_from(const std::string& s) {
  if (s == "white") return NoiseKind::kWhite;
  if (s == "pink") return NoiseKind::kPink;
  if (s == "filtered_burst") return NoiseKind::kFilteredBurst;
  throw Error("unknown noise_kind: " + s);
}

struct DatasetSpec {
  int n_clips = 200;
  double clip_seconds = 1.0;
  int sample_rate = 4000;
  std::vector<double> snr_grid_db = {0.0, 5.0, 10.0, 15.0};
  CleanKind clean_kind = CleanKind::kSineMixture;
  NoiseKind noise_kind = NoiseKind::kWhite;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_clips <= 0 || clip_seconds <= 0.0 || sample_rate <= 0)
      throw Error("DatasetSpec: counts and durations must be positive");
    if (snr_grid_db.empty()) throw Error("DatasetSpec: empty SNR grid");
  }
  int clip_samples() const {
    return static_cast<int>(std::lround(clip_seconds * sample_rate));
  }
};

// Scales noise so 10 log10(P_clean / P_noise_scaled) = snr_db, returns
// clean + scaled noise.
inline Waveform mix_at_snr(const Waveform& clean, const Waveform& noise,
                           double snr_db) {
  if (clean.size() != noise.size())
    throw Error("mix_at_snr: length mismatch " + std::to_string(clean.size()) +
                " vs " + std::to_string(noise.size()));
  double pc = 0.0, pn = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    pc += static_cast<double>(clean[i]) * clean[i];
    pn += static_cast<double>(noise[i]) * noise[i];
  }
  if (pc <= 0.0) throw Error("mix_at_snr: zero-power clean signal");
  if (pn <= 0.0) throw Error("mix_at_snr: zero-power noise signal");
  double g = std::sqrt(pc / (pn * std::pow(10.0, snr_db / 10.0)));
  Waveform out{std::vector<real>(clean.size()), clean.sample_rate};
  for (std::size_t i = 0; i < clean.size(); ++i)
    out[i] = static_cast<real>(clean[i] + g * noise[i]);
  return out;
}

namespace detail {

inline Waveform gen_clean(const DatasetSpec& spec, Rng& rng) {
  int n = spec.clip_samples();
  Waveform w{std::vector<real>(n, real(0)), spec.sample_rate};
  double sr = spec.sample_rate;
  switch (spec.clean_kind) {
    case CleanKind::kSineMixture: {
      // Bin-aligned frequencies so DFT peaks land exactly on the drawn bins.
      int k = 2 + static_cast<int>(rng.uniform_int(2));  // 2 or 3 tones
      double fres = 1.0 / spec.clip_seconds;
      // Clean content lives in a fixed band (5%..25% of the rate) while the
      // noise families are broadband, so denoising has learnable structure.
      int lo = static_cast<int>(std::ceil(0.05 * sr / fres));
      int hi = static_cast<int>(std::floor(0.25 * sr / fres));
      for (int j = 0; j < k; ++j) {
        double f = fres * (lo + static_cast<int>(rng.uniform_int(hi - lo + 1)));
        double amp = rng.uniform(0.3, 1.0);
        double ph = rng.uniform(0.0, 2.0 * M_PI);
        for (int i = 0; i < n; ++i)
          w[i] += static_cast<real>(amp * std::sin(2.0 * M_PI * f * i / sr + ph));
      }
      break;
    }
    case CleanKind::kChirp: {
      double f0 = rng.uniform(0.05 * sr, 0.25 * sr);
      double f1 = rng.uniform(0.05 * sr, 0.25 * sr);
      double ph = rng.uniform(0.0, 2.0 * M_PI);
      for (int i = 0; i < n; ++i) {
        double t = i / sr;
        double f = f0 + (f1 - f0) * t / spec.clip_seconds;
        w[i] = static_cast<real>(std::sin(2.0 * M_PI * (f0 + 0.5 * (f - f0)) * t + ph));
      }
      break;
    }
    case CleanKind::kAmTone: {
      double fc = rng.uniform(0.06 * sr, 0.22 * sr);
      double fm = rng.uniform(2.0, 12.0);
      double ph = rng.uniform(0.0, 2.0 * M_PI);
      for (int i = 0; i < n; ++i) {
        double t = i / sr;
        w[i] = static_cast<real>((1.0 + 0.5 * std::sin(2.0 * M_PI * fm * t)) *
                                 std::sin(2.0 * M_PI * fc * t + ph));
      }
      break;
    }
  }
  return w;
}

inline Waveform gen_noise(const DatasetSpec& spec, Rng& rng) {
  int n = spec.clip_samples();
  Waveform w{std::vector<real>(n), spec.sample_rate};
  switch (spec.noise_kind) {
    case NoiseKind::kWhite:
      for (int i = 0; i < n; ++i) w[i] = static_cast<real>(rng.normal());
      break;
    case NoiseKind::kPink: {
      // Kellet 3-pole/3-zero pink approximation; coefficients are part of the
      // dataset definition and must not change.
      double b0 = 0, b1 = 0, b2 = 0;
      for (int i = 0; i < n; ++i) {
        double white = rng.normal();
        b0 = 0.99765 * b0 + white * 0.0990460;
        b1 = 0.96300 * b1 + white * 0.2965164;
        b2 = 0.57000 * b2 + white * 1.0526913;
        w[i] = static_cast<real>((b0 + b1 + b2 + white * 0.1848) * 0.2);
      }
      break;
    }
    case NoiseKind::kFilteredBurst: {
      // White noise gated by random bursts, one-pole lowpassed.
      int n_bursts = 2 + static_cast<int>(rng.uniform_int(3));
      std::vector<double> env(n, 0.05);
      for (int bidx = 0; bidx < n_bursts; ++bidx) {
        int c = static_cast<int>(rng.uniform_int(n));
        int half = n / 10 + static_cast<int>(rng.uniform_int(n / 10 + 1));
        for (int i = std::max(0, c - half); i < std::min(n, c + half); ++i)
          env[i] = 1.0;
      }
      double y = 0.0, a = 0.3;
      for (int i = 0; i < n; ++i) {
        y = (1.0 - a) * y + a * rng.normal() * env[i];
        w[i] = static_cast<real>(y);
      }
      break;
    }
  }
  return w;
}

}  // namespace detail

// Deterministic paired clip: keyed entirely by (spec, clip_index, base rng
// stream). Both signals are jointly rescaled so max |sample| <= 0.95.
inline std::pair<Waveform, Waveform> generate_pair(const DatasetSpec& spec,
                                                   int clip_index, Rng& base) {
  spec.validate();
  Rng rng = base.fork(static_cast<std::uint64_t>(clip_index));
  Waveform clean = detail::gen_clean(spec, rng);
  double peak = 0.0;
  for (real v : clean.samples) peak = std::max(peak, std::abs(static_cast<double>(v)));
  if (peak > 0.0)
    for (auto& v : clean.samples) v = static_cast<real>(v * 0.6 / peak);
  Waveform noise = detail::gen_noise(spec, rng);
  double snr = spec.snr_grid_db[rng.uniform_int(spec.snr_grid_db.size())];
  Waveform noisy = mix_at_snr(clean, noise, snr);
  double mx = 0.0;
  for (real v : noisy.samples) mx = std::max(mx, std::abs(static_cast<double>(v)));
  for (real v : clean.samples) mx = std::max(mx, std::abs(static_cast<double>(v)));
  if (mx > 0.95) {
    double g = 0.95 / mx;
    for (auto& v : clean.samples) v = static_cast<real>(v * g);
    for (auto& v : noisy.samples) v = static_cast<real>(v * g);
  }
  return {std::move(clean), std::move(noisy)};
}

// ---------------------------------------------------------------------------
// WAV PCM16 mono I/O.

namespace detail {
inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
}  // namespace detail

// Canonical 44-byte header, PCM16 mono. Samples outside [-1,1] are clipped
// with a warning on stderr.
inline void wav_write(const std::string& path, const Waveform& w) {
  std::string body;
  body.reserve(44 + 2 * w.size());
  body += "RIFF";
  detail::put_u32(body, static_cast<std::uint32_t>(36 + 2 * w.size()));
  body += "WAVEfmt ";
  detail::put_u32(body, 16);
  detail::put_u16(body, 1);  // PCM
  detail::put_u16(body, 1);  // mono
  detail::put_u32(body, static_cast<std::uint32_t>(w.sample_rate));
  detail::put_u32(body, static_cast<std::uint32_t>(w.sample_rate * 2));
  detail::put_u16(body, 2);
  detail::put_u16(body, 16);
  body += "data";
  detail::put_u32(body, static_cast<std::uint32_t>(2 * w.size()));
  bool clipped = false;
  for (real v : w.samples) {
    double d = static_cast<double>(v);
    if (d < -1.0 || d > 1.0) {
      clipped = true;
      d = std::clamp(d, -1.0, 1.0);
    }
    long q = std::lround(d * 32768.0);  // round half away from zero
    q = std::clamp(q, -32768L, 32767L);
    detail::put_u16(body, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  if (clipped)
    std::fprintf(stderr, "wav_write: %s: samples outside [-1,1] clipped\n",
                 path.c_str());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("wav_write: cannot open " + path);
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!f) throw Error("wav_write: write failed for " + path);
}

inline Waveform wav_read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("wav_read: cannot open " + path);
  std::vector<unsigned char> buf{std::istreambuf_iterator<char>(f),
                                 std::istreambuf_iterator<char>()};
  if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw Error("wav_read: malformed RIFF/WAVE header in " + path);
  // Walk chunks: fmt then data.
  std::size_t pos = 12;
  int channels = 0, bits = 0, fmt_tag = 0, rate = 0;
  const unsigned char* data = nullptr;
  std::uint32_t data_len = 0;
  while (pos + 8 <= buf.size()) {
    std::uint32_t len = detail::get_u32(buf.data() + pos + 4);
    if (std::memcmp(buf.data() + pos, "fmt ", 4) == 0) {
      if (pos + 8 + 16 > buf.size()) throw Error("wav_read: truncated fmt chunk");
      fmt_tag = detail::get_u16(buf.data() + pos + 8);
      channels = detail::get_u16(buf.data() + pos + 10);
      rate = static_cast<int>(detail::get_u32(buf.data() + pos + 12));
      bits = detail::get_u16(buf.data() + pos + 22);
    } else if (std::memcmp(buf.data() + pos, "data", 4) == 0) {
      data = buf.data() + pos + 8;
      data_len = len;
    }
    pos += 8 + len + (len & 1);
  }
  if (fmt_tag == 0 || data == nullptr)
    throw Error("wav_read: missing fmt or data chunk in " + path);
  if (fmt_tag != 1) throw Error("wav_read: PCM format required in " + path);
  if (channels != 1) throw Error("wav_read: mono required in " + path);
  if (bits != 16) throw Error("wav_read: 16-bit samples required in " + path);
  if (data + data_len > buf.data() + buf.size())
    throw Error("wav_read: truncated data chunk in " + path);
  Waveform w{std::vector<real>(data_len / 2), rate};
  for (std::size_t i = 0; i < w.size(); ++i) {
    auto q = static_cast<std::int16_t>(detail::get_u16(data + 2 * i));
    w[i] = static_cast<real>(q / 32768.0);
  }
  return w;
}

// ---------------------------------------------------------------------------
// On-disk dataset with JSON manifest.

struct DatasetEntry {
  std::string id;
  std::string clean_path;
  std::string noisy_path;
};

inline nlohmann::json spec_to_json(const DatasetSpec& s) {
  return {{"n_clips", s.n_clips},
          {"clip_seconds", s.clip_seconds},
          {"sample_rate", s.sample_rate},
          {"snr_grid_db", s.snr_grid_db},
          {"clean_kind", to_string(s.clean_kind)},
          {"noise_kind", to_string(s.noise_kind)},
          {"seed", s.seed}};
}

inline DatasetSpec spec_from_json(const nlohmann::json& j) {
  DatasetSpec s;
  s.n_clips = j.at("n_clips").get<int>();
  s.clip_seconds = j.at("clip_seconds").get<double>();
  s.sample_rate = j.at("sample_rate").get<int>();
  s.snr_grid_db = j.at("snr_grid_db").get<std::vector<double>>();
  s.clean_kind = clean_kind_from(j.at("clean_kind").get<std::string>());
  s.noise_kind = noise_kind_from(j.at("noise_kind").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

inline void write_dataset(const DatasetSpec& spec, const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  Rng base(spec.seed);
  nlohmann::json manifest;
  manifest["spec"] = spec_to_json(spec);
  manifest["clips"] = nlohmann::json::array();
  for (int i = 0; i < spec.n_clips; ++i) {
    auto [clean, noisy] = generate_pair(spec, i, base);
    char id[16];
    std::snprintf(id, sizeof(id), "clip%04d", i);
    std::string cp = std::string(id) + "_clean.wav";
    std::string np = std::string(id) + "_noisy.wav";
    wav_write((fs::path(out_dir) / cp).string(), clean);
    wav_write((fs::path(out_dir) / np).string(), noisy);
    manifest["clips"].push_back({{"id", id}, {"clean", cp}, {"noisy", np}});
  }
  std::ofstream mf(fs::path(out_dir) / "manifest.json");
  mf << manifest.dump(2) << "\n";
}

// Loads every pair listed in a manifest into memory.
inline std::vector<std::pair<Waveform, Waveform>> load_dataset(
    const std::string& manifest_path, std::vector<std::string>* ids = nullptr) {
  namespace fs = std::filesystem;
  std::ifstream f(manifest_path);
  if (!f) throw Error("load_dataset: cannot open " + manifest_path);
  nlohmann::json m = nlohmann::json::parse(f);
  fs::path dir = fs::path(manifest_path).parent_path();
  std::vector<std::pair<Waveform, Waveform>> out;
  for (auto& c : m.at("clips")) {
    out.emplace_back(wav_read((dir / c.at("clean").get<std::string>()).string()),
                     wav_read((dir / c.at("noisy").get<std::string>()).string()));
    if (ids) ids->push_back(c.at("id").get<std::string>());
  }
  return out;
}

// In-memory generation (no I/O), same clips as write_dataset.
inline std::vector<std::pair<Waveform, Waveform>> generate_dataset(
    const DatasetSpec& spec) {
  spec.validate();
  Rng base(spec.seed);
  std::vector<std::pair<Waveform, Waveform>> out;
  out.reserve(spec.n_clips);
  for (int i = 0; i < spec.n_clips; ++i) out.push_back(generate_pair(spec, i, base));
  return out;
}

}  // namespace srtnet
