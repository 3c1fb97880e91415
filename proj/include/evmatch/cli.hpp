#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "evmatch/overlay.hpp"
#include "evmatch/trainer.hpp"

// Command implementations behind the CLI: synth, train, match, eval, flops.
// Each returns 0 on success; usage errors are handled by the arg parser and
// runtime failures surface as evmatch::Error (exit code 2 in main).

namespace evmatch::cli {

inline PairConfig pair_config_from(const RunConfig& cfg) {
  PairConfig pc;
  pc.width = cfg.get_int("data.width");
  pc.height = cfg.get_int("data.height");
  pc.focal = cfg.get_double("data.focal");
  pc.texture_size = cfg.get_int("data.texture");
  pc.duration_s = cfg.get_double("data.duration_s");
  pc.fps = cfg.get_double("data.fps");
  pc.motion.rot_deg = cfg.get_double("data.rot_deg");
  pc.motion.trans = cfg.get_double("data.trans");
  pc.motion.speed_min = cfg.get_double("data.speed_min");
  pc.motion.speed_max = cfg.get_double("data.speed_max");
  pc.baseline_rot_deg = cfg.get_double("data.baseline_rot_deg");
  pc.baseline_trans = cfg.get_double("data.baseline_trans");
  pc.c_min = cfg.get_double("data.c_min");
  pc.c_max = cfg.get_double("data.c_max");
  pc.noise_rate_hz = cfg.get_double("data.noise_rate_hz");
  pc.refractory_ns = cfg.get_int("data.refractory_ns");
  pc.two_plane_fraction = cfg.get_double("data.two_plane_fraction");
  pc.image_view_fraction = cfg.get_double("data.image_fraction");
  return pc;
}

inline EvalProtocol protocol_from(const RunConfig& cfg) {
  EvalProtocol p;
  p.interval_scales = cfg.get_list("eval.sweep");
  p.ransac.iters = static_cast<int>(cfg.get_int("eval.ransac_iters"));
  p.ransac.thresh = cfg.get_double("eval.ransac_thresh");
  p.repeats = static_cast<int>(cfg.get_int("eval.repeats"));
  p.epipolar_thresh = cfg.get_double("eval.epipolar_thresh");
  p.px_thresh = cfg.get_double("eval.px_thresh");
  p.seed = static_cast<uint64_t>(cfg.get_int("eval.seed"));
  std::string mode = cfg.get_string("eval.pose_mode");
  if (mode == "max_rt")
    p.mode = PoseErrorMode::kMaxRt;
  else if (mode == "rotation_only")
    p.mode = PoseErrorMode::kRotationOnly;
  else
    fail("eval.pose_mode must be max_rt or rotation_only");
  return p;
}

// Generates data.pairs pairs into out_dir. Resumable: existing manifest
// entries are kept and generation continues from the next index.
inline int cmd_synth(const RunConfig& cfg, const std::string& out_dir, std::ostream& out) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  PairConfig pc = pair_config_from(cfg);
  int64_t n = cfg.get_int("data.pairs");
  uint64_t seed0 = static_cast<uint64_t>(cfg.get_int("data.seed"));
  std::string manifest_path = out_dir + "/manifest.jsonl";
  Manifest manifest;
  if (fs::exists(manifest_path)) {
    manifest = read_manifest(manifest_path);
    require(manifest.config_echo == cfg.to_text(),
            "synth: existing manifest was generated with a different config");
  }
  manifest.config_echo = cfg.to_text();
  int64_t start = static_cast<int64_t>(manifest.entries.size());
  int64_t threads = std::max<int64_t>(1, cfg.get_int("data.threads"));
  std::vector<ManifestEntry> fresh(static_cast<size_t>(std::max<int64_t>(0, n - start)));
  std::atomic<int64_t> next{0};
  std::atomic<bool> failed{false};
  std::string error_msg;
  std::mutex error_mu;
  auto worker = [&]() {
    while (!failed.load()) {
      int64_t i = next.fetch_add(1);
      if (i >= static_cast<int64_t>(fresh.size())) break;
      try {
        SynthPair pair = generate_pair(pc, seed0 + static_cast<uint64_t>(start + i));
        fresh[static_cast<size_t>(i)] = write_pair(pair, out_dir, static_cast<uint64_t>(start + i));
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lk(error_mu);
        error_msg = e.what();
        failed.store(true);
      }
    }
  };
  std::vector<std::thread> pool;
  for (int64_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  require(!failed.load(), "synth: " + error_msg);
  for (auto& e : fresh) manifest.entries.push_back(std::move(e));
  write_manifest(manifest, manifest_path);
  out << "synth: " << manifest.entries.size() << " pairs in " << out_dir << " ("
      << (n - start > 0 ? n - start : 0) << " new)\n";
  return 0;
}

inline int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_ckpt,
                     const std::string& resume_ckpt, std::ostream& out) {
  Manifest manifest = read_manifest(data_dir + "/manifest.jsonl");
  require(!manifest.entries.empty(), "train: empty manifest in " + data_dir);
  EventMatcherModel model(cfg);
  Trainer trainer(model, manifest.entries, data_dir);
  if (!resume_ckpt.empty()) {
    trainer.resume_from(resume_ckpt);
    out << "resumed from " << resume_ckpt << " at step " << trainer.optimizer().step() << "\n";
  }
  TrainResult result = trainer.run(out_ckpt, &out);
  if (result.aborted) {
    out << "train: ABORTED (" << result.abort_reason << "); last-good checkpoint retained\n";
    return 2;
  }
  out << "train: finished at step " << result.final_step << ", checkpoint " << out_ckpt << "\n";
  return 0;
}

inline Tensor input_to_gray(const std::string& path) { return load_image01(path); }

inline bool is_event_file(const std::string& path) {
  return path.size() > 5 && path.substr(path.size() - 5) == ".evt1";
}

inline int cmd_match(const std::string& ckpt, const std::string& input_a,
                     const std::string& input_b, const std::string& out_path,
                     const std::string& overlay_path, double interval_ms, std::ostream& out) {
  EventMatcherModel model = EventMatcherModel::load(ckpt);
  double window = interval_ms > 0 ? interval_ms : model.config().get_double("eval.window_ms");
  require(is_event_file(input_a), "match: input A must be an EVT1 event file");
  EventStream ev_a = trailing_window(read_events(input_a), window);
  MatchSet ms;
  Tensor gray_b;
  if (is_event_file(input_b)) {
    EventStream ev_b = trailing_window(read_events(input_b), window);
    ms = model.match_events(ev_a, ev_b);
    gray_b = event_frame(ev_b);
  } else {
    Tensor img = input_to_gray(input_b);
    ms = model.match_event_image(ev_a, img);
    gray_b = img;
  }
  std::map<std::string, std::string> header{
      {"input_a", input_a},
      {"input_b", input_b},
      {"interval_ms", std::to_string(window)},
      {"omega", std::to_string(ms.omega)},
      {"empty_input", ms.empty_input ? "1" : "0"},
  };
  write_matches(ms.pixels, header, out_path);
  out << "match: " << ms.pixels.size() << " matches -> " << out_path;
  if (ms.empty_input) out << " (empty input window)";
  out << "\n";
  if (!overlay_path.empty()) {
    write_pnm(render_overlay(event_frame(ev_a), gray_b, ms.pixels), overlay_path);
    out << "overlay -> " << overlay_path << "\n";
  }
  return 0;
}

inline int cmd_eval(const RunConfig& cfg_overrides, const std::string& ckpt,
                    const std::string& data_dir, const std::string& report_path, bool oracle_gt,
                    const std::string& sweep, std::ostream& out) {
  Manifest manifest = read_manifest(data_dir + "/manifest.jsonl");
  require(!manifest.entries.empty(), "eval: empty manifest");
  RunConfig cfg = cfg_overrides;
  EvalProtocol protocol = protocol_from(cfg);
  if (!sweep.empty()) {
    protocol.interval_scales.clear();
    std::stringstream ss(sweep);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) protocol.interval_scales.push_back(std::stod(item));
  }
  EvalReport report;
  if (oracle_gt) {
    PairMatcher oracle = [](const ManifestEntry& e, const std::string& d, double) {
      return oracle_matches(load_gt(d + "/" + e.gt_file), 4);
    };
    report = run_benchmark(manifest.entries, data_dir, oracle, protocol);
    report.config_echo = cfg.to_text();
  } else {
    EventMatcherModel model = EventMatcherModel::load(ckpt);
    double base_ms = cfg.get_double("eval.window_ms");
    report = run_benchmark(manifest.entries, data_dir, make_model_matcher(model, base_ms), protocol);
    report.config_echo = model.config().to_text();
  }
  nlohmann::json js = report.to_json();
  out << "eval over " << manifest.entries.size() << " pairs:\n";
  for (const ScaleReport& s : report.scales) {
    out << "  scale x" << s.scale << ": auc5 " << s.auc[0] << " auc10 " << s.auc[1] << " auc20 "
        << s.auc[2] << " prec " << s.precision << " px_prec " << s.px_precision << " matches "
        << s.mean_matches << " pairs " << s.pairs_evaluated << " failed " << s.pairs_failed
        << "\n";
  }
  if (!report_path.empty()) {
    std::ofstream f(report_path, std::ios::trunc);
    require(f.good(), "eval: cannot open report " + report_path);
    f << js.dump(2) << "\n";
    out << "report -> " << report_path << "\n";
  }
  return 0;
}

inline int cmd_flops(const std::string& ckpt, const std::string& data_dir, int64_t pair_index,
                     const std::string& report_path, std::ostream& out) {
  EventMatcherModel model = EventMatcherModel::load(ckpt);
  Manifest manifest = read_manifest(data_dir + "/manifest.jsonl");
  require(pair_index >= 0 && pair_index < static_cast<int64_t>(manifest.entries.size()),
          "flops: pair index out of range");
  const ManifestEntry& entry = manifest.entries[static_cast<size_t>(pair_index)];
  double window = model.config().get_double("eval.window_ms");
  EventStream a = trailing_window(read_events(data_dir + "/" + entry.events_a), window);
  MatchSet ms;
  if (entry.modality_b == "image") {
    ms = model.match_event_image(a, load_image01(data_dir + "/" + entry.image_b));
  } else {
    EventStream b = trailing_window(read_events(data_dir + "/" + entry.events_b), window);
    ms = model.match_events(a, b);
  }
  require(!ms.empty_input, "flops: empty input window");
  nlohmann::json js{{"dense_spatial_macs", ms.flops.dense_spatial},
                    {"pruned_spatial_macs", ms.flops.pruned_spatial},
                    {"reduction_percent", ms.flops.reduction_percent},
                    {"matches", ms.pixels.size()},
                    {"sets_enabled", model.sets_enabled()}};
  out << js.dump(2) << "\n";
  if (!report_path.empty()) {
    std::ofstream f(report_path, std::ios::trunc);
    require(f.good(), "flops: cannot open report " + report_path);
    f << js.dump(2) << "\n";
  }
  return 0;
}

}  // namespace evmatch::cli
