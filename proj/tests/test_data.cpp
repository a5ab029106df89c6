#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "srtnet/data.hpp"

using namespace srtnet;
namespace fs = std::filesystem;

namespace {
double power(const Waveform& w) {
  double p = 0;
  for (real v : w.samples) p += static_cast<double>(v) * v;
  return p;
}
fs::path tmpdir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("srtnet_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}
}  // namespace

TEST_CASE("mix_at_snr") {
  Rng rng(1);
  Waveform clean{std::vector<real>(1000), 4000};
  for (std::size_t i = 0; i < clean.size(); ++i)
    clean[i] = static_cast<real>(0.5 * std::sin(0.07 * i));
  Waveform noise{std::vector<real>(1000), 4000};
  for (auto& v : noise.samples) v = static_cast<real>(rng.normal());

  SECTION("0 dB equalizes powers") {
    Waveform mixed = mix_at_snr(clean, noise, 0.0);
    double pn = 0;
    for (std::size_t i = 0; i < mixed.size(); ++i) {
      double d = static_cast<double>(mixed[i]) - clean[i];
      pn += d * d;
    }
    REQUIRE(pn == Catch::Approx(power(clean)).epsilon(1e-9));
  }
  SECTION("+60 dB leaves clean nearly untouched") {
    Waveform mixed = mix_at_snr(clean, noise, 60.0);
    double num = 0, den = power(clean);
    for (std::size_t i = 0; i < mixed.size(); ++i) {
      double d = static_cast<double>(mixed[i]) - clean[i];
      num += d * d;
    }
    REQUIRE(std::sqrt(num / den) < 1e-3 + std::pow(10.0, -60.0 / 20.0));
  }
  SECTION("recomputed SNR matches the request within 1e-6 dB") {
    Rng trial_rng(2);
    for (int trial = 0; trial < 100; ++trial) {
      double snr = trial_rng.uniform(-10.0, 30.0);
      Waveform n2{std::vector<real>(1000), 4000};
      for (auto& v : n2.samples) v = static_cast<real>(trial_rng.normal());
      Waveform mixed = mix_at_snr(clean, n2, snr);
      double pn = 0;
      for (std::size_t i = 0; i < mixed.size(); ++i) {
        double d = static_cast<double>(mixed[i]) - clean[i];
        pn += d * d;
      }
      double got = 10.0 * std::log10(power(clean) / pn);
      REQUIRE(std::abs(got - snr) < 1e-6);
    }
  }
  SECTION("zero-power inputs rejected") {
    Waveform silence{std::vector<real>(1000, real(0)), 4000};
    CHECK_THROWS_AS(mix_at_snr(silence, noise, 0.0), Error);
    CHECK_THROWS_AS(mix_at_snr(clean, silence, 0.0), Error);
  }
}

TEST_CASE("generate_pair") {
  DatasetSpec spec;
  spec.seed = 99;

  SECTION("deterministic for (spec, index, seed)") {
    Rng b1(spec.seed), b2(spec.seed);
    auto [c1, n1] = generate_pair(spec, 3, b1);
    auto [c2, n2] = generate_pair(spec, 3, b2);
    REQUIRE(c1.samples == c2.samples);
    REQUIRE(n1.samples == n2.samples);
  }
  SECTION("clip length is seconds * rate") {
    Rng b(spec.seed);
    auto [c, n] = generate_pair(spec, 0, b);
    REQUIRE(c.size() == 4000);
    REQUIRE(n.size() == 4000);
  }
  SECTION("peak bounded by 0.95") {
    Rng b(spec.seed);
    for (int i = 0; i < 10; ++i) {
      auto [c, n] = generate_pair(spec, i, b);
      // shared rescale lands the peak exactly on 0.95, up to rounding
      for (real v : c.samples) REQUIRE(std::abs(static_cast<double>(v)) <= 0.95 + 1e-12);
      for (real v : n.samples) REQUIRE(std::abs(static_cast<double>(v)) <= 0.95 + 1e-12);
    }
  }
  SECTION("sine mixture concentrates spectrum on a few bins") {
    Rng b(spec.seed);
    auto [c, n] = generate_pair(spec, 1, b);
    // Direct DFT magnitudes; tones are bin-aligned by construction.
    std::size_t N = c.size();
    std::vector<double> mag(N / 2);
    for (std::size_t k = 1; k < N / 2; ++k) {
      double re = 0, im = 0;
      for (std::size_t i = 0; i < N; ++i) {
        double a = 2.0 * M_PI * k * i / N;
        re += c[i] * std::cos(a);
        im -= c[i] * std::sin(a);
      }
      mag[k] = std::hypot(re, im);
    }
    double peak = *std::max_element(mag.begin(), mag.end());
    int strong = 0;
    double off_peak_energy = 0, total = 0;
    for (std::size_t k = 1; k < N / 2; ++k) {
      total += mag[k] * mag[k];
      if (mag[k] > 0.1 * peak)
        ++strong;
      else
        off_peak_energy += mag[k] * mag[k];
    }
    REQUIRE(strong >= 2);
    REQUIRE(strong <= 3);
    REQUIRE(off_peak_energy / total < 1e-6);
  }
  SECTION("all clean and noise families produce finite output") {
    for (auto ck : {CleanKind::kSineMixture, CleanKind::kChirp, CleanKind::kAmTone})
      for (auto nk : {NoiseKind::kWhite, NoiseKind::kPink, NoiseKind::kFilteredBurst}) {
        DatasetSpec s2 = spec;
        s2.clean_kind = ck;
        s2.noise_kind = nk;
        Rng b(1);
        auto [c, n] = generate_pair(s2, 0, b);
        REQUIRE(all_finite(c));
        REQUIRE(all_finite(n));
        REQUIRE(power(c) > 0.0);
      }
  }
}

TEST_CASE("wav round trip") {
  fs::path dir = tmpdir("wav");

  SECTION("ramp over [-1,1) within quantization step") {
    Waveform w{std::vector<real>(2048), 8000};
    for (std::size_t i = 0; i < w.size(); ++i)
      w[i] = static_cast<real>(-1.0 + 2.0 * i / w.size());
    std::string p = (dir / "ramp.wav").string();
    wav_write(p, w);
    Waveform r = wav_read(p);
    REQUIRE(r.size() == w.size());
    REQUIRE(r.sample_rate == 8000);
    for (std::size_t i = 0; i < w.size(); ++i)
      REQUIRE(std::abs(static_cast<double>(r[i]) - w[i]) <= 1.0 / 32768.0);
  }
  SECTION("random waveforms stay within the bound") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      Waveform w{std::vector<real>(64), 4000};
      for (auto& v : w.samples) v = static_cast<real>(rng.uniform(-0.999, 0.999));
      std::string p = (dir / "rt.wav").string();
      wav_write(p, w);
      Waveform r = wav_read(p);
      for (std::size_t i = 0; i < w.size(); ++i)
        REQUIRE(std::abs(static_cast<double>(r[i]) - w[i]) <= 1.0 / 32768.0);
    }
  }
  SECTION("canonical 44-byte header fields") {
    Waveform w{std::vector<real>(100, real(0.25)), 16000};
    std::string p = (dir / "hdr.wav").string();
    wav_write(p, w);
    std::ifstream f(p, std::ios::binary);
    std::vector<unsigned char> buf{std::istreambuf_iterator<char>(f),
                                   std::istreambuf_iterator<char>()};
    REQUIRE(buf.size() == 44 + 200);
    CHECK(std::memcmp(buf.data(), "RIFF", 4) == 0);
    CHECK(std::memcmp(buf.data() + 8, "WAVEfmt ", 8) == 0);
    auto u16 = [&](int o) { return buf[o] | (buf[o + 1] << 8); };
    auto u32 = [&](int o) {
      return buf[o] | (buf[o + 1] << 8) | (buf[o + 2] << 16) | (std::uint32_t(buf[o + 3]) << 24);
    };
    CHECK(u32(16) == 16);      // fmt chunk size
    CHECK(u16(20) == 1);       // PCM
    CHECK(u16(22) == 1);       // mono
    CHECK(u32(24) == 16000);   // sample rate
    CHECK(u32(28) == 32000);   // byte rate
    CHECK(u16(32) == 2);       // block align
    CHECK(u16(34) == 16);      // bits per sample
    CHECK(std::memcmp(buf.data() + 36, "data", 4) == 0);
    CHECK(u32(40) == 200);
  }
  SECTION("stereo file rejected with a mono error") {
    // Hand-build a stereo header.
    Waveform w{std::vector<real>(4, real(0)), 4000};
    std::string p = (dir / "stereo.wav").string();
    wav_write(p, w);
    std::fstream f(p, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(22);
    char two = 2;
    f.write(&two, 1);
    f.close();
    try {
      wav_read(p);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("mono") != std::string::npos);
    }
  }
  SECTION("malformed header rejected") {
    std::string p = (dir / "bad.wav").string();
    std::ofstream f(p, std::ios::binary);
    f << "not a wav file at all............................";
    f.close();
    CHECK_THROWS_AS(wav_read(p), Error);
  }

  fs::remove_all(dir);
}

TEST_CASE("dataset writing and loading") {
  fs::path dir = tmpdir("dataset");
  DatasetSpec spec;
  spec.n_clips = 4;
  spec.clip_seconds = 0.1;
  spec.seed = 7;

  SECTION("regeneration is byte-identical") {
    write_dataset(spec, (dir / "a").string());
    write_dataset(spec, (dir / "b").string());
    for (auto& e : fs::directory_iterator(dir / "a")) {
      std::ifstream fa(e.path(), std::ios::binary);
      std::ifstream fb(dir / "b" / e.path().filename(), std::ios::binary);
      std::string sa{std::istreambuf_iterator<char>(fa), std::istreambuf_iterator<char>()};
      std::string sb{std::istreambuf_iterator<char>(fb), std::istreambuf_iterator<char>()};
      REQUIRE(sa == sb);
    }
  }
  SECTION("manifest loads every pair") {
    write_dataset(spec, (dir / "c").string());
    std::vector<std::string> ids;
    auto pairs = load_dataset((dir / "c" / "manifest.json").string(), &ids);
    REQUIRE(pairs.size() == 4);
    REQUIRE(ids.size() == 4);
    REQUIRE(ids[0] == "clip0000");
    for (auto& [c, n] : pairs) {
      REQUIRE(c.size() == 400);
      REQUIRE(n.size() == 400);
    }
  }
  SECTION("in-memory generation matches the written clips up to quantization") {
    write_dataset(spec, (dir / "d").string());
    auto mem = generate_dataset(spec);
    auto disk = load_dataset((dir / "d" / "manifest.json").string());
    REQUIRE(mem.size() == disk.size());
    for (std::size_t i = 0; i < mem.size(); ++i)
      for (std::size_t j = 0; j < mem[i].first.size(); ++j)
        REQUIRE(std::abs(static_cast<double>(mem[i].first[j]) - disk[i].first[j]) <=
                1.0 / 32768.0);
  }

  fs::remove_all(dir);
}
