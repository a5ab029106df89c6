// Command-line surface: synth-data, train, enhance, evaluate, schedule-dump,
// gradcheck. Config file plus flag overrides; flags win. Exit codes: 0 ok,
// 1 validation error, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "srtnet/data.hpp"
#include "srtnet/diffusion.hpp"
#include "srtnet/gradcheck.hpp"
#include "srtnet/pipeline.hpp"
#include "srtnet/schedule.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Resolved run settings; every run logs the final values.
struct RunConfig {
  srtnet::TrainConfig train;
  srtnet::DatasetSpec dataset;
  int n_runs = 1;
  double ratio = 0.2;
  bool average_waveforms = false;
};

const std::set<std::string> kAllowedKeys = {
    "mode",        "steps",       "batch_size",   "lr",
    "beta_start",  "beta_end",    "T",            "aux_loss_weight",
    "seed",        "checkpoint_every", "crop_len",
    "n_blocks",    "channels",    "dilation_cycle", "kernel_size",
    "n_clips",     "clip_seconds", "sample_rate",  "snr_grid_db",
    "clean_kind",  "noise_kind",  "n_runs",       "ratio",
    "average_waveforms"};

void apply_config_file(RunConfig& rc, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw srtnet::Error("cannot open config: " + path);
  json j = json::parse(f);
  for (auto& [key, val] : j.items())
    if (!kAllowedKeys.count(key))
      throw srtnet::Error("unknown config key: " + key);
  if (j.contains("mode")) rc.train.mode = srtnet::variant_mode_from(j["mode"]);
  if (j.contains("steps")) rc.train.steps = j["steps"].get<long>();
  if (j.contains("batch_size")) rc.train.batch_size = j["batch_size"].get<int>();
  if (j.contains("lr")) rc.train.lr = static_cast<srtnet::real>(j["lr"].get<double>());
  if (j.contains("beta_start")) rc.train.schedule.beta_start = j["beta_start"].get<double>();
  if (j.contains("beta_end")) rc.train.schedule.beta_end = j["beta_end"].get<double>();
  if (j.contains("T")) rc.train.schedule.T = j["T"].get<int>();
  if (j.contains("aux_loss_weight")) rc.train.aux_loss_weight = j["aux_loss_weight"].get<double>();
  if (j.contains("seed")) {
    rc.train.seed = j["seed"].get<std::uint64_t>();
    rc.dataset.seed = rc.train.seed;
  }
  if (j.contains("checkpoint_every")) rc.train.checkpoint_every = j["checkpoint_every"].get<long>();
  if (j.contains("crop_len")) rc.train.crop_len = j["crop_len"].get<int>();
  if (j.contains("n_blocks")) rc.train.net.n_blocks = j["n_blocks"].get<int>();
  if (j.contains("channels")) rc.train.net.channels = j["channels"].get<int>();
  if (j.contains("dilation_cycle"))
    rc.train.net.dilation_cycle = j["dilation_cycle"].get<std::vector<int>>();
  if (j.contains("kernel_size")) rc.train.net.kernel_size = j["kernel_size"].get<int>();
  if (j.contains("n_clips")) rc.dataset.n_clips = j["n_clips"].get<int>();
  if (j.contains("clip_seconds")) rc.dataset.clip_seconds = j["clip_seconds"].get<double>();
  if (j.contains("sample_rate")) rc.dataset.sample_rate = j["sample_rate"].get<int>();
  if (j.contains("snr_grid_db")) rc.dataset.snr_grid_db = j["snr_grid_db"].get<std::vector<double>>();
  if (j.contains("clean_kind")) rc.dataset.clean_kind = srtnet::clean_kind_from(j["clean_kind"]);
  if (j.contains("noise_kind")) rc.dataset.noise_kind = srtnet::noise_kind_from(j["noise_kind"]);
  if (j.contains("n_runs")) rc.n_runs = j["n_runs"].get<int>();
  if (j.contains("ratio")) rc.ratio = j["ratio"].get<double>();
  if (j.contains("average_waveforms")) rc.average_waveforms = j["average_waveforms"].get<bool>();
}

json resolved_config(const RunConfig& rc) {
  json j;
  j["mode"] = srtnet::to_string(rc.train.mode);
  j["steps"] = rc.train.steps;
  j["batch_size"] = rc.train.batch_size;
  j["lr"] = static_cast<double>(rc.train.lr);
  j["beta_start"] = rc.train.schedule.beta_start;
  j["beta_end"] = rc.train.schedule.beta_end;
  j["T"] = rc.train.schedule.T;
  j["aux_loss_weight"] = rc.train.aux_loss_weight;
  j["seed"] = rc.train.seed;
  j["checkpoint_every"] = rc.train.checkpoint_every;
  j["crop_len"] = rc.train.crop_len;
  j["net"] = {{"n_blocks", rc.train.net.n_blocks},
              {"channels", rc.train.net.channels},
              {"dilation_cycle", rc.train.net.dilation_cycle},
              {"kernel_size", rc.train.net.kernel_size}};
  j["dataset"] = srtnet::spec_to_json(rc.dataset);
  j["n_runs"] = rc.n_runs;
  j["ratio"] = rc.ratio;
  j["average_waveforms"] = rc.average_waveforms;
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw srtnet::Error("cannot open for writing: " + path);
  f << text;
}

std::string format_sig17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

int run_schedule_dump(const RunConfig& rc, const std::string& out_path) {
  auto s = srtnet::build_schedule(rc.train.schedule.beta_start,
                                  rc.train.schedule.beta_end, rc.train.schedule.T);
  std::string csv = "t,alpha,alpha_bar,m,delta,delta_tilde,cx,cy,ce\n";
  for (int t = 1; t <= s.T; ++t) {
    csv += std::to_string(t);
    for (double v : {s.alpha[t], s.alpha_bar[t], s.m[t], s.delta[t],
                     s.delta_tilde[t], s.cx[t], s.cy[t], s.ce[t]})
      csv += "," + format_sig17(v);
    csv += "\n";
  }
  if (out_path.empty())
    std::cout << csv;
  else
    write_text(out_path, csv);
  return 0;
}

int run_train(const RunConfig& rc, const std::string& manifest, const std::string& out_dir) {
  fs::create_directories(out_dir);
  write_text((fs::path(out_dir) / "config.json").string(), resolved_config(rc).dump(2) + "\n");
  auto dataset = srtnet::load_dataset(manifest);
  srtnet::Trainer trainer(rc.train);
  std::vector<srtnet::LossLogRow> log;
  srtnet::Checkpoint ckpt = trainer.train(dataset, out_dir, &log);
  std::string csv = "step,loss,wall_ms\n";
  for (const auto& r : log)
    csv += std::to_string(r.step) + "," + format_sig17(r.loss) + "," +
           std::to_string(r.wall_ms) + "\n";
  write_text((fs::path(out_dir) / "loss_log.csv").string(), csv);
  srtnet::save_checkpoint(ckpt, (fs::path(out_dir) / "ckpt_final.srtn").string());
  std::cout << "trained " << ckpt.step << " steps, final checkpoint at "
            << (fs::path(out_dir) / "ckpt_final.srtn").string() << "\n";
  return 0;
}

int run_enhance(const RunConfig& rc, const std::string& ckpt_path,
                const std::string& in_wav, const std::string& out_wav) {
  srtnet::Checkpoint ckpt = srtnet::load_checkpoint(ckpt_path);
  srtnet::Models models = srtnet::models_from_checkpoint(ckpt);
  auto sched = srtnet::build_schedule(ckpt.schedule.beta_start, ckpt.schedule.beta_end,
                                      ckpt.schedule.T);
  srtnet::Waveform noisy = srtnet::wav_read(in_wav);
  srtnet::EnhanceResult res = srtnet::enhance(models, ckpt.mode, noisy, sched,
                                              rc.n_runs, rc.ratio, rc.train.seed);
  if (rc.n_runs == 1 || !rc.average_waveforms) {
    srtnet::wav_write(out_wav, res.runs[0]);
    for (int r = 1; r < rc.n_runs; ++r) {
      fs::path p(out_wav);
      fs::path alt = p.parent_path() / (p.stem().string() + "_run" + std::to_string(r) +
                                        p.extension().string());
      srtnet::wav_write(alt.string(), res.runs[r]);
    }
  } else {
    srtnet::wav_write(out_wav, res.mean);
  }
  std::cout << "enhanced " << in_wav << " -> " << out_wav << " (" << rc.n_runs
            << " run(s), ratio " << rc.ratio << ")\n";
  return 0;
}

int run_evaluate(const RunConfig& rc, const std::string& ckpt_path,
                 const std::string& manifest, const std::string& out_csv) {
  srtnet::Checkpoint ckpt = srtnet::load_checkpoint(ckpt_path);
  srtnet::Models models = srtnet::models_from_checkpoint(ckpt);
  auto sched = srtnet::build_schedule(ckpt.schedule.beta_start, ckpt.schedule.beta_end,
                                      ckpt.schedule.T);
  std::vector<std::string> ids;
  auto dataset = srtnet::load_dataset(manifest, &ids);
  srtnet::EvalReport rep = srtnet::evaluate(models, ckpt.mode, dataset, sched, rc.n_runs,
                                            rc.ratio, rc.train.seed,
                                            rc.average_waveforms, &ids);
  std::string csv = "clip_id,si_snr_noisy,si_snr_enh,seg_snr_noisy,seg_snr_enh\n";
  for (const auto& r : rep.rows)
    csv += r.clip_id + "," + format_sig17(r.si_snr_noisy) + "," +
           format_sig17(r.si_snr_enh) + "," + format_sig17(r.seg_snr_noisy) + "," +
           format_sig17(r.seg_snr_enh) + "\n";
  if (!out_csv.empty()) write_text(out_csv, csv);
  std::printf("clips=%zu si_snr: noisy %.3f dB -> enhanced %.3f dB (improvement %+.3f dB); "
              "seg_snr: %.3f dB -> %.3f dB\n",
              rep.rows.size(), rep.mean_si_snr_noisy, rep.mean_si_snr_enh,
              rep.mean_si_snr_improvement(), rep.mean_seg_snr_noisy, rep.mean_seg_snr_enh);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SRTNet-style enhance-and-refine speech enhancement"};
  app.require_subcommand(1);

  std::string config_path, out_path, ckpt_path, manifest_path, in_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<long> steps;
  std::optional<int> runs;
  std::optional<double> ratio;
  bool avg_waveform = false;

  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "random seed");
  app.add_option("--mode", mode, "variant mode");
  app.add_option("--steps", steps, "training steps");
  app.add_option("--runs", runs, "sampling runs per clip");
  app.add_option("--ratio", ratio, "recombination ratio");
  app.add_option("--out", out_path, "output path");
  app.add_flag("--avg-waveform", avg_waveform, "average run waveforms instead of metrics");

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic paired dataset");
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--data", manifest_path, "dataset manifest.json")->required();
  auto* enh = app.add_subcommand("enhance", "enhance a WAV file");
  enh->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  enh->add_option("--in", in_path, "input noisy WAV")->required();
  auto* eval = app.add_subcommand("evaluate", "score a checkpoint on a paired test set");
  eval->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  eval->add_option("--data", manifest_path, "dataset manifest.json")->required();
  auto* sdump = app.add_subcommand("schedule-dump", "dump the diffusion schedule as CSV");
  auto* gcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    RunConfig rc;
    if (!config_path.empty()) apply_config_file(rc, config_path);
    if (seed) {
      rc.train.seed = *seed;
      rc.dataset.seed = *seed;
    }
    if (mode) rc.train.mode = srtnet::variant_mode_from(*mode);
    if (steps) rc.train.steps = *steps;
    if (runs) rc.n_runs = *runs;
    if (ratio) rc.ratio = *ratio;
    if (avg_waveform) rc.average_waveforms = true;

    try {
      if (synth->parsed()) {
        if (out_path.empty()) throw srtnet::Error("synth-data requires --out DIR");
        srtnet::write_dataset(rc.dataset, out_path);
        write_text((fs::path(out_path) / "config.json").string(),
                   resolved_config(rc).dump(2) + "\n");
        std::cout << "wrote " << rc.dataset.n_clips << " clips to " << out_path << "\n";
        return 0;
      }
      if (train->parsed()) {
        if (out_path.empty()) throw srtnet::Error("train requires --out DIR");
        return run_train(rc, manifest_path, out_path);
      }
      if (enh->parsed()) {
        if (out_path.empty()) throw srtnet::Error("enhance requires --out FILE");
        return run_enhance(rc, ckpt_path, in_path, out_path);
      }
      if (eval->parsed()) return run_evaluate(rc, ckpt_path, manifest_path, out_path);
      if (sdump->parsed()) return run_schedule_dump(rc, out_path);
      if (gcheck->parsed()) {
        double max_err = srtnet::gradcheck_all(rc.train.seed);
        std::printf("gradcheck max relative error: %.3e\n", max_err);
        return max_err < 1e-4 ? 0 : 2;
      }
    } catch (const srtnet::Error& e) {
      // Library-level validation and runtime failures.
      std::string msg = e.what();
      std::cerr << "error: " << msg << "\n";
      bool validation = msg.find("unknown") != std::string::npos ||
                        msg.find("requires") != std::string::npos ||
                        msg.find("must be") != std::string::npos;
      return validation ? 1 : 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
