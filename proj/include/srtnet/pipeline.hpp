#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "srtnet/common.hpp"
#include "srtnet/data.hpp"
#include "srtnet/diffusion.hpp"
#include "srtnet/grad.hpp"
#include "srtnet/metrics.hpp"
#include "srtnet/nets.hpp"
#include "srtnet/schedule.hpp"

namespace srtnet {

enum class VariantMode { kSrtnet, kResidualFree, kResidualFreeAuxLoss, kNoDeterministic };

inline std::string to_string(VariantMode m) {
  switch (m) {
    case VariantMode::kSrtnet: return "SRTNET";
    case VariantMode::kResidualFree: return "RESIDUAL_FREE";
    case VariantMode::kResidualFreeAuxLoss: return "RESIDUAL_FREE_AUX_LOSS";
    case VariantMode::kNoDeterministic: return "NO_DETERMINISTIC";
  }
  throw Error("bad VariantMode");
}

inline VariantMode variant_mode_from(const std::string& s) {
  if (s == "SRTNET") return VariantMode::kSrtnet;
  if (s == "RESIDUAL_FREE") return VariantMode::kResidualFree;
  if (s == "RESIDUAL_FREE_AUX_LOSS") return VariantMode::kResidualFreeAuxLoss;
  if (s == "NO_DETERMINISTIC") return VariantMode::kNoDeterministic;
  throw Error("unknown mode: " + s + " (expected SRTNET, RESIDUAL_FREE, "
              "RESIDUAL_FREE_AUX_LOSS or NO_DETERMINISTIC)");
}

struct ScheduleParams {
  double beta_start = 1e-4;
  double beta_end = 0.035;
  int T = 50;
};

struct TrainConfig {
  VariantMode mode = VariantMode::kSrtnet;
  long steps = 5000;
  int batch_size = 32;
  real lr = real(2e-4);
  ScheduleParams schedule;
  double aux_loss_weight = 1.0;  // RESIDUAL_FREE_AUX_LOSS only
  std::uint64_t seed = 0;
  long checkpoint_every = 1000;
  int crop_len = 0;  // 0 = train on full clips
  NetConfig net;
  bool freeze_det = false;  // exclude D from the optimizer (test hook)

  void validate() const {
    if (steps < 0 || batch_size <= 0 || checkpoint_every <= 0)
      throw Error("TrainConfig: counts must be positive");
    if (!(lr > real(0))) throw Error("TrainConfig: lr must be > 0");
    if (crop_len < 0) throw Error("TrainConfig: crop_len must be >= 0");
    net.validate();
  }
};

// ---------------------------------------------------------------------------
// Checkpoint format: "SRTN" magic, u32 LE version, u64 LE metadata length,
// UTF-8 JSON metadata, then contiguous little-endian float32 parameter blobs
// in manifest order.

class CheckpointError : public Error {
 public:
  using Error::Error;
};
class CheckpointBadMagic : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointVersionMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncated : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointManifestMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  VariantMode mode = VariantMode::kSrtnet;
  NetConfig net;
  ScheduleParams schedule;
  long step = 0;
  std::vector<NamedArray> params;  // det.* then sto.*, manifest order
};

namespace detail {
inline nlohmann::json net_to_json(const NetConfig& c) {
  return {{"n_blocks", c.n_blocks},
          {"channels", c.channels},
          {"dilation_cycle", c.dilation_cycle},
          {"kernel_size", c.kernel_size}};
}
inline NetConfig net_from_json(const nlohmann::json& j) {
  NetConfig c;
  c.n_blocks = j.at("n_blocks").get<int>();
  c.channels = j.at("channels").get<int>();
  c.dilation_cycle = j.at("dilation_cycle").get<std::vector<int>>();
  c.kernel_size = j.at("kernel_size").get<int>();
  return c;
}
}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json meta;
  meta["mode"] = to_string(ckpt.mode);
  meta["step"] = ckpt.step;
  meta["net"] = detail::net_to_json(ckpt.net);
  meta["schedule"] = {{"beta_start", ckpt.schedule.beta_start},
                      {"beta_end", ckpt.schedule.beta_end},
                      {"T", ckpt.schedule.T}};
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : ckpt.params) {
    manifest.push_back({{"name", p.name}, {"shape", p.shape}, {"offset", offset}});
    offset += p.data.size() * sizeof(float);
  }
  meta["manifest"] = manifest;
  std::string mstr = meta.dump();

  std::string out;
  out += "SRTN";
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((ckpt.version >> (8 * i)) & 0xff));
  std::uint64_t mlen = mstr.size();
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((mlen >> (8 * i)) & 0xff));
  out += mstr;
  for (const auto& p : ckpt.params) {
    std::size_t pos = out.size();
    out.resize(pos + p.data.size() * sizeof(float));
    std::memcpy(out.data() + pos, p.data.data(), p.data.size() * sizeof(float));
  }

  // Atomic write: temp file in the same directory, then rename.
  namespace fs = std::filesystem;
  fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("save_checkpoint: cannot open " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("save_checkpoint: write failed for " + tmp.string());
  }
  fs::rename(tmp, target);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("load_checkpoint: cannot open " + path);
  std::string buf{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  if (buf.size() < 16) throw CheckpointTruncated("checkpoint too short: " + path);
  if (buf.compare(0, 4, "SRTN") != 0)
    throw CheckpointBadMagic("bad magic in " + path);
  std::uint32_t version = 0;
  for (int i = 0; i < 4; ++i)
    version |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[4 + i])) << (8 * i);
  if (version != kCheckpointVersion)
    throw CheckpointVersionMismatch("checkpoint version " + std::to_string(version) +
                                    ", expected " + std::to_string(kCheckpointVersion));
  std::uint64_t mlen = 0;
  for (int i = 0; i < 8; ++i)
    mlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[8 + i])) << (8 * i);
  if (16 + mlen > buf.size())
    throw CheckpointTruncated("metadata extends past end of file: " + path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(buf.substr(16, mlen));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointManifestMismatch(std::string("unparsable metadata: ") + e.what());
  }

  Checkpoint ckpt;
  ckpt.version = version;
  try {
    ckpt.mode = variant_mode_from(meta.at("mode").get<std::string>());
    ckpt.step = meta.at("step").get<long>();
    ckpt.net = detail::net_from_json(meta.at("net"));
    ckpt.schedule.beta_start = meta.at("schedule").at("beta_start").get<double>();
    ckpt.schedule.beta_end = meta.at("schedule").at("beta_end").get<double>();
    ckpt.schedule.T = meta.at("schedule").at("T").get<int>();

    const char* blob = buf.data() + 16 + mlen;
    std::size_t blob_len = buf.size() - 16 - mlen;
    std::uint64_t expect_offset = 0;
    for (const auto& e : meta.at("manifest")) {
      NamedArray p;
      p.name = e.at("name").get<std::string>();
      p.shape = e.at("shape").get<std::vector<int>>();
      std::uint64_t offset = e.at("offset").get<std::uint64_t>();
      if (offset != expect_offset)
        throw CheckpointManifestMismatch("non-contiguous offset for " + p.name);
      std::size_t n = 1;
      for (int d : p.shape) {
        if (d <= 0) throw CheckpointManifestMismatch("bad shape for " + p.name);
        n *= static_cast<std::size_t>(d);
      }
      if (offset + n * sizeof(float) > blob_len)
        throw CheckpointTruncated("parameter blob truncated at " + p.name);
      p.data.resize(n);
      std::memcpy(p.data.data(), blob + offset, n * sizeof(float));
      expect_offset = offset + n * sizeof(float);
      ckpt.params.push_back(std::move(p));
    }
    if (expect_offset != blob_len)
      throw CheckpointManifestMismatch("trailing bytes after last parameter");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointManifestMismatch(std::string("bad metadata: ") + e.what());
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Model bundle. Both networks are always constructed (same rng consumption in
// every mode, so mode reduction is exact); NO_DETERMINISTIC simply never
// invokes or updates D.

struct Models {
  DetNet det;
  StoNet sto;

  Models(const NetConfig& cfg, Rng& rng) : det(cfg, rng), sto(cfg, rng) {}

  static Models init(const NetConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    Rng init_rng = rng.fork(0xA11CE);
    return Models(cfg, init_rng);
  }
};

inline Checkpoint make_checkpoint(Models& models, VariantMode mode,
                                  const ScheduleParams& sp, long step) {
  Checkpoint c;
  c.mode = mode;
  c.net = models.det.config();
  c.schedule = sp;
  c.step = step;
  auto dump = [&c](ParamMap& pm) {
    for (auto& [name, t] : pm.items) {
      NamedArray a;
      a.name = name;
      a.shape = t.shape();
      a.data.reserve(t.numel());
      for (real v : t.data()) a.data.push_back(static_cast<float>(v));
      c.params.push_back(std::move(a));
    }
  };
  dump(models.det.params());
  dump(models.sto.params());
  return c;
}

inline Models models_from_checkpoint(const Checkpoint& ckpt) {
  Models m = Models::init(ckpt.net, 0);
  std::size_t idx = 0;
  auto load = [&](ParamMap& pm) {
    for (auto& [name, t] : pm.items) {
      if (idx >= ckpt.params.size())
        throw CheckpointManifestMismatch("missing parameter " + name);
      const NamedArray& a = ckpt.params[idx++];
      if (a.name != name || a.shape != t.shape())
        throw CheckpointManifestMismatch("manifest disagrees at " + name);
      for (std::size_t i = 0; i < t.numel(); ++i)
        t.data()[i] = static_cast<real>(a.data[i]);
    }
  };
  load(m.det.params());
  load(m.sto.params());
  if (idx != ckpt.params.size())
    throw CheckpointManifestMismatch("unexpected extra parameters in manifest");
  return m;
}

// ---------------------------------------------------------------------------
// Training.

struct LossLogRow {
  long step;
  double loss;
  long wall_ms;
};

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg)
      : cfg_((cfg.validate(), cfg)),
        models_(Models::init(cfg.net, cfg.seed)),
        sched_(build_schedule(cfg.schedule.beta_start, cfg.schedule.beta_end,
                              cfg.schedule.T)),
        bands_(noise_level_bands(sched_)),
        rng_(Rng(cfg.seed).fork(0x7E41)),
        opt_(trainable_params(), AdamConfig{cfg.lr, real(0.9), real(0.999), real(1e-8)}) {}

  // Builds the batch loss graph. Exposed so tests can inspect gradients
  // before the optimizer consumes them.
  Tensor batch_loss(const std::vector<std::pair<Waveform, Waveform>>& batch,
                    std::vector<double>* levels_out = nullptr) {
    if (batch.empty()) throw Error("batch_loss: empty batch");
    Tensor total = Tensor::scalar(0);
    for (const auto& [clean, noisy] : batch) {
      if (clean.size() != noisy.size())
        throw Error("batch_loss: clean/noisy length mismatch");
      double level = sample_noise_level(bands_, rng_);
      if (levels_out) levels_out->push_back(level);
      Tensor x = waveform_tensor(clean);
      Tensor y = waveform_tensor(noisy);
      Tensor eps = Tensor::zeros(x.shape());
      for (auto& v : eps.data()) v = static_cast<real>(rng_.normal());

      Tensor x0, y0;
      Tensor aux_loss;
      bool has_aux = false;
      switch (cfg_.mode) {
        case VariantMode::kSrtnet: {
          Tensor y_init = models_.det.forward(y);
          x0 = sub(x, y_init);
          y0 = sub(y, y_init);
          break;
        }
        case VariantMode::kResidualFree:
        case VariantMode::kResidualFreeAuxLoss: {
          Tensor y_init = models_.det.forward(y);
          x0 = x;
          y0 = y_init;
          if (cfg_.mode == VariantMode::kResidualFreeAuxLoss) {
            aux_loss = scale(mse(y_init, x), static_cast<real>(cfg_.aux_loss_weight));
            has_aux = true;
          }
          break;
        }
        case VariantMode::kNoDeterministic:
          x0 = x;
          y0 = y;
          break;
      }
      Tensor x_t = forward_sample_t(x0, y0, level, eps);
      Tensor eps_star = combined_noise_t(x0, y0, level, eps);
      Tensor eps_hat = models_.sto.forward(x_t, y0, level);
      Tensor item_loss = mse(eps_hat, eps_star);
      if (has_aux) item_loss = add(item_loss, aux_loss);
      total = add(total, item_loss);
    }
    return scale(total, real(1) / static_cast<real>(batch.size()));
  }

  double train_step(const std::vector<std::pair<Waveform, Waveform>>& batch) {
    std::vector<double> levels;
    Tensor loss = batch_loss(batch, &levels);
    double lv = static_cast<double>(loss.item());
    if (!std::isfinite(lv)) {
      std::string diag = "train_step: non-finite loss at step " +
                         std::to_string(step_) + "; levels:";
      for (double l : levels) diag += " " + std::to_string(l);
      double bn = 0;
      for (const auto& [c, n] : batch)
        for (real v : n.samples) bn += static_cast<double>(v) * v;
      diag += "; batch noisy power " + std::to_string(bn);
      throw Error(diag);
    }
    backward(loss);
    opt_.step();
    ++step_;
    return lv;
  }

  // Full loop: shuffles per epoch, crops per item, logs (step, loss, wall_ms),
  // emits periodic checkpoints when out_dir is non-empty.
  Checkpoint train(const std::vector<std::pair<Waveform, Waveform>>& dataset,
                   const std::string& out_dir = "",
                   std::vector<LossLogRow>* loss_log = nullptr) {
    if (dataset.empty()) throw Error("train: empty dataset");
    namespace fs = std::filesystem;
    if (!out_dir.empty()) fs::create_directories(out_dir);
    auto t0 = std::chrono::steady_clock::now();

    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size();  // triggers shuffle on first use

    for (long s = 0; s < cfg_.steps; ++s) {
      std::vector<std::pair<Waveform, Waveform>> batch;
      batch.reserve(cfg_.batch_size);
      for (int b = 0; b < cfg_.batch_size; ++b) {
        if (cursor >= order.size()) {
          for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng_.uniform_int(i)]);
          cursor = 0;
        }
        const auto& [clean, noisy] = dataset[order[cursor++]];
        batch.push_back(crop(clean, noisy));
      }
      double loss = train_step(batch);
      if (loss_log) {
        auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
        loss_log->push_back({step_, loss, static_cast<long>(ms)});
      }
      if (!out_dir.empty() && (step_ % cfg_.checkpoint_every == 0 || s + 1 == cfg_.steps)) {
        Checkpoint c = make_checkpoint(models_, cfg_.mode, cfg_.schedule, step_);
        save_checkpoint(c, (fs::path(out_dir) / ("ckpt_step" + std::to_string(step_) + ".srtn")).string());
      }
    }
    return make_checkpoint(models_, cfg_.mode, cfg_.schedule, step_);
  }

  // Resume support: overwrite parameters and step counter from a checkpoint.
  void restore(const Checkpoint& ckpt) {
    Models loaded = models_from_checkpoint(ckpt);
    copy_params(loaded.det.params(), models_.det.params());
    copy_params(loaded.sto.params(), models_.sto.params());
    step_ = ckpt.step;
  }

  Models& models() { return models_; }
  const DiscreteSchedule& schedule() const { return sched_; }
  long step() const { return step_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> trainable_params() {
    std::vector<Tensor> ps;
    bool with_det = cfg_.mode != VariantMode::kNoDeterministic && !cfg_.freeze_det;
    if (with_det)
      for (auto& t : models_.det.params().tensors()) ps.push_back(t);
    for (auto& t : models_.sto.params().tensors()) ps.push_back(t);
    return ps;
  }

  std::pair<Waveform, Waveform> crop(const Waveform& clean, const Waveform& noisy) {
    if (cfg_.crop_len <= 0 || clean.size() <= static_cast<std::size_t>(cfg_.crop_len))
      return {clean, noisy};
    std::size_t off = rng_.uniform_int(clean.size() - cfg_.crop_len + 1);
    Waveform c{{clean.samples.begin() + off, clean.samples.begin() + off + cfg_.crop_len},
               clean.sample_rate};
    Waveform n{{noisy.samples.begin() + off, noisy.samples.begin() + off + cfg_.crop_len},
               noisy.sample_rate};
    return {std::move(c), std::move(n)};
  }

  static void copy_params(ParamMap& from, ParamMap& to) {
    for (std::size_t i = 0; i < from.items.size(); ++i)
      to.items[i].second.data() = from.items[i].second.data();
  }

  TrainConfig cfg_;
  Models models_;
  DiscreteSchedule sched_;
  NoiseLevelBands bands_;
  Rng rng_;
  Adam opt_;
  long step_ = 0;
};

// ---------------------------------------------------------------------------
// Enhancement and evaluation.

struct EnhanceResult {
  std::vector<Waveform> runs;  // recombined per-run outputs
  Waveform mean;               // waveform average of the runs
};

// Runs the variant-appropriate reverse chain n_runs times with independent
// seeded sources and recombines each output with the noisy input.
inline EnhanceResult enhance(Models& models, VariantMode mode, const Waveform& noisy,
                             const DiscreteSchedule& sched, int n_runs, double ratio,
                             std::uint64_t seed) {
  if (n_runs < 1) throw Error("enhance: n_runs must be >= 1");
  Rng master(seed);
  EnhanceResult res;
  Waveform zero{std::vector<real>(noisy.size(), real(0)), noisy.sample_rate};

  for (int r = 0; r < n_runs; ++r) {
    Rng rng = master.fork(static_cast<std::uint64_t>(r));
    Waveform out;
    switch (mode) {
      case VariantMode::kSrtnet: {
        out = sample_chain(models.det, models.sto, noisy, sched, rng);
        break;
      }
      case VariantMode::kResidualFree:
      case VariantMode::kResidualFreeAuxLoss: {
        // Chain conditions on y_init and samples the clean signal directly.
        Waveform y_init = models.det.forward(noisy);
        out = run_reverse_chain(models.sto, y_init, zero, sched, rng);
        break;
      }
      case VariantMode::kNoDeterministic: {
        out = run_reverse_chain(models.sto, noisy, zero, sched, rng);
        break;
      }
    }
    res.runs.push_back(recombine(out, noisy, ratio));
  }
  res.mean = Waveform{std::vector<real>(noisy.size(), real(0)), noisy.sample_rate};
  for (const auto& run : res.runs)
    for (std::size_t i = 0; i < run.size(); ++i) res.mean[i] += run[i];
  for (auto& v : res.mean.samples) v /= static_cast<real>(n_runs);
  return res;
}

struct EvalRow {
  std::string clip_id;
  double si_snr_noisy, si_snr_enh;
  double seg_snr_noisy, seg_snr_enh;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_si_snr_noisy = 0, mean_si_snr_enh = 0;
  double mean_seg_snr_noisy = 0, mean_seg_snr_enh = 0;

  double mean_si_snr_improvement() const { return mean_si_snr_enh - mean_si_snr_noisy; }
};

// Per-clip metrics, averaged over n_runs at the metric level. average_waveforms
// switches to scoring the mean waveform instead.
inline EvalReport evaluate(Models& models, VariantMode mode,
                           const std::vector<std::pair<Waveform, Waveform>>& dataset,
                           const DiscreteSchedule& sched, int n_runs, double ratio,
                           std::uint64_t seed, bool average_waveforms = false,
                           const std::vector<std::string>* ids = nullptr) {
  if (dataset.empty()) throw Error("evaluate: empty dataset");
  EvalReport rep;
  for (std::size_t j = 0; j < dataset.size(); ++j) {
    const auto& [clean, noisy] = dataset[j];
    EnhanceResult er = enhance(models, mode, noisy, sched, n_runs, ratio,
                               Rng(seed).fork(j).next_u64());
    EvalRow row;
    row.clip_id = (ids && j < ids->size()) ? (*ids)[j] : ("clip" + std::to_string(j));
    row.si_snr_noisy = si_snr(noisy, clean);
    row.seg_snr_noisy = seg_snr(noisy, clean);
    if (average_waveforms) {
      row.si_snr_enh = si_snr(er.mean, clean);
      row.seg_snr_enh = seg_snr(er.mean, clean);
    } else {
      double si = 0, seg = 0;
      for (const auto& run : er.runs) {
        si += si_snr(run, clean);
        seg += seg_snr(run, clean);
      }
      row.si_snr_enh = si / n_runs;
      row.seg_snr_enh = seg / n_runs;
    }
    rep.rows.push_back(row);
  }
  for (const auto& r : rep.rows) {
    rep.mean_si_snr_noisy += r.si_snr_noisy;
    rep.mean_si_snr_enh += r.si_snr_enh;
    rep.mean_seg_snr_noisy += r.seg_snr_noisy;
    rep.mean_seg_snr_enh += r.seg_snr_enh;
  }
  double n = static_cast<double>(rep.rows.size());
  rep.mean_si_snr_noisy /= n;
  rep.mean_si_snr_enh /= n;
  rep.mean_seg_snr_noisy /= n;
  rep.mean_seg_snr_enh /= n;
  return rep;
}

}  // namespace srtnet
