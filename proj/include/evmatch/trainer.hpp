#pragma once

#include <atomic>
#include <thread>

#include "evmatch/evalbench.hpp"
#include "evmatch/model.hpp"
#include "evmatch/optim.hpp"

// Training loop over an on-disk synthetic dataset: batch-parallel forward
// and backward per pair, deterministic gradient merge in pair order, AdamW
// with cosine decay, bitwise-resumable checkpoints.

namespace evmatch {

struct TrainSample {
  EventStream win_a;
  EventStream win_b;
  Tensor image_b;
  bool is_image = false;
  CoarseGt gt;
};

inline Tensor load_image01(const std::string& path) {
  ImageU8 img = read_pnm(path);
  require(img.channels == 1, "load_image01: expected grayscale");
  Tensor t({static_cast<int64_t>(img.height), static_cast<int64_t>(img.width)});
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<double>(img.pixels[static_cast<size_t>(i)]) / 255.0;
  return t;
}

inline TrainSample load_sample(const EventMatcherModel& model, const ManifestEntry& entry,
                               const std::string& dir, double window_ms) {
  TrainSample s;
  s.win_a = trailing_window(read_events(dir + "/" + entry.events_a), window_ms);
  if (entry.modality_b == "image") {
    s.is_image = true;
    s.image_b = load_image01(dir + "/" + entry.image_b);
  } else {
    s.win_b = trailing_window(read_events(dir + "/" + entry.events_b), window_ms);
  }
  s.gt = model.coarse_gt_from(load_gt(dir + "/" + entry.gt_file));
  return s;
}

struct StepLog {
  int64_t step = 0;
  double total = 0, l_coarse = 0, l_fine = 0, l_loc = 0, l_ponder = 0;
  int64_t pairs_used = 0;
};

struct TrainResult {
  std::vector<StepLog> history;
  bool aborted = false;   // non-finite loss hit; last-good checkpoint kept
  std::string abort_reason;
  int64_t final_step = 0;
};

class Trainer {
 public:
  Trainer(EventMatcherModel& model, std::vector<ManifestEntry> entries, std::string dir)
      : model_(model), entries_(std::move(entries)), dir_(std::move(dir)) {
    const RunConfig& cfg = model_.config();
    AdamW::Options opt;
    opt.lr = cfg.get_double("train.lr");
    opt.weight_decay = cfg.get_double("train.weight_decay");
    opt.total_steps = cfg.get_int("train.steps");
    adam_ = AdamW(opt);
    batch_ = cfg.get_int("train.batch");
    threads_ = std::max<int64_t>(1, cfg.get_int("train.threads"));
    window_ms_ = cfg.get_double("train.window_ms");
    window_min_ms_ = cfg.get_double("train.window_min_ms");
    window_max_ms_ = cfg.get_double("train.window_max_ms");
    seed_ = static_cast<uint64_t>(cfg.get_int("train.seed"));
    checkpoint_every_ = cfg.get_int("train.checkpoint_every");
    log_every_ = std::max<int64_t>(1, cfg.get_int("train.log_every"));
  }

  // Restores parameters, optimizer state and step from a checkpoint.
  void resume_from(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    model_.params().import_from(ck);
    auto it = ck.tensors.find("opt.step");
    require(it != ck.tensors.end(), "resume: checkpoint has no optimizer state");
    adam_.set_step(static_cast<int64_t>(it->second[0]));
    for (auto& [name, v] : model_.params().all()) {
      auto m = ck.tensors.find("opt.m." + name);
      auto vv = ck.tensors.find("opt.v." + name);
      require(m != ck.tensors.end() && vv != ck.tensors.end(),
              "resume: missing moments for '" + name + "'");
      adam_.state()[name] = {m->second, vv->second};
    }
  }

  void save_checkpoint_to(const std::string& path) const {
    std::map<std::string, Tensor> extra;
    extra["opt.step"] = Tensor::scalar(static_cast<double>(adam_.step()));
    for (const auto& [name, st] : adam_.state()) {
      if (!st.m.defined()) continue;
      extra["opt.m." + name] = st.m;
      extra["opt.v." + name] = st.v;
    }
    model_.save(path, extra);
  }

  // Runs until the configured step budget; checkpoints periodically when
  // `checkpoint_path` is non-empty. Non-finite losses abort the run and the
  // last periodic checkpoint stays on disk untouched.
  TrainResult run(const std::string& checkpoint_path, std::ostream* log_stream = nullptr,
                  int64_t stop_after = -1) {
    TrainResult result;
    int64_t total_steps = model_.config().get_int("train.steps");
    if (stop_after >= 0) total_steps = std::min(total_steps, stop_after);
    require(!entries_.empty() || total_steps <= adam_.step(),
            "train: empty manifest with steps remaining");
    for (int64_t step = adam_.step(); step < total_steps; ++step) {
      StepLog log;
      log.step = step;
      bool ok = run_step(step, log, result.abort_reason);
      if (!ok) {
        result.aborted = true;
        break;
      }
      result.history.push_back(log);
      if (log_stream && (step % log_every_ == 0 || step + 1 == total_steps))
        (*log_stream) << "step " << step << " loss " << log.total << " (Lc " << log.l_coarse
                      << " Lf " << log.l_fine << " Ll " << log.l_loc << " Lp " << log.l_ponder
                      << ") pairs " << log.pairs_used << "\n";
      if (!checkpoint_path.empty() && checkpoint_every_ > 0 &&
          (step + 1) % checkpoint_every_ == 0)
        save_checkpoint_to(checkpoint_path);
    }
    result.final_step = adam_.step();
    if (!checkpoint_path.empty() && !result.aborted) save_checkpoint_to(checkpoint_path);
    return result;
  }

  AdamW& optimizer() { return adam_; }

 private:
  bool run_step(int64_t step, StepLog& log, std::string& abort_reason) {
    Rng rng = Rng::derive(seed_, 0xb000 + static_cast<uint64_t>(step));
    std::vector<size_t> picks(static_cast<size_t>(batch_));
    std::vector<double> windows(picks.size(), window_ms_);
    bool jitter = window_min_ms_ > 0 && window_max_ms_ >= window_min_ms_;
    for (size_t i = 0; i < picks.size(); ++i) {
      picks[i] = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(entries_.size()) - 1));
      if (jitter) windows[i] = rng.uniform(window_min_ms_, window_max_ms_);
    }

    struct SlotResult {
      std::map<std::string, Tensor> grads;
      double total = 0, lc = 0, lf = 0, ll = 0, lp = 0;
      bool used = false;
      std::exception_ptr error;
    };
    std::vector<SlotResult> slots(picks.size());
    std::atomic<size_t> next{0};
    auto worker = [&]() {
      while (true) {
        size_t i = next.fetch_add(1);
        if (i >= picks.size()) break;
        SlotResult& slot = slots[i];
        try {
          TrainSample sample = load_sample(model_, entries_[picks[i]], dir_, windows[i]);
          if (sample.gt.pairs.empty() || sample.win_a.empty() ||
              (!sample.is_image && sample.win_b.empty()))
            continue;  // skipped pair, flagged by omission
          auto va = model_.encode_events(sample.win_a, false);
          auto vb = sample.is_image ? model_.encode_image(sample.image_b)
                                    : model_.encode_events(sample.win_b, false);
          auto pf = model_.transform_pair(std::move(va), std::move(vb));
          LossBreakdown lb = model_.pair_loss(pf, sample.gt);
          if (lb.skipped) continue;
          BackwardCtx ctx = backward(lb.total);
          for (const auto& [name, v] : model_.params().all()) {
            const Tensor* g = ctx.find(v);
            if (g) slot.grads[name] = *g;
          }
          slot.total = lb.total.value()[0];
          slot.lc = lb.l_coarse.value()[0];
          slot.lf = lb.l_fine.value()[0];
          slot.ll = lb.l_loc.value()[0];
          slot.lp = lb.l_ponder.defined() ? lb.l_ponder.value()[0] : 0.0;
          slot.used = true;
        } catch (...) {
          slot.error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    for (int64_t t = 0; t < threads_; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    for (SlotResult& slot : slots)
      if (slot.error) {
        try {
          std::rethrow_exception(slot.error);
        } catch (const std::exception& e) {
          abort_reason = e.what();
        }
        return false;
      }

    // deterministic merge in pair order
    std::map<std::string, Tensor> grads;
    int64_t used = 0;
    for (SlotResult& slot : slots) {
      if (!slot.used) continue;
      ++used;
      log.total += slot.total;
      log.l_coarse += slot.lc;
      log.l_fine += slot.lf;
      log.l_loc += slot.ll;
      log.l_ponder += slot.lp;
      for (auto& [name, g] : slot.grads) {
        auto it = grads.find(name);
        if (it == grads.end()) {
          grads.emplace(name, g);
        } else {
          Tensor& acc = it->second;
          for (int64_t k = 0; k < acc.numel(); ++k) acc[k] += g[k];
        }
      }
    }
    log.pairs_used = used;
    if (used == 0) {
      adam_.advance();  // keep the step count aligned for resume
      return true;
    }
    double inv = 1.0 / static_cast<double>(used);
    log.total *= inv;
    log.l_coarse *= inv;
    log.l_fine *= inv;
    log.l_loc *= inv;
    log.l_ponder *= inv;
    if (!std::isfinite(log.total)) {
      abort_reason = "non-finite loss at step " + std::to_string(step);
      return false;
    }
    for (auto& [name, v] : model_.params().all()) {
      auto it = grads.find(name);
      Tensor g = it == grads.end() ? Tensor(v.value().shape()) : it->second;
      if (it != grads.end())
        for (int64_t k = 0; k < g.numel(); ++k) g[k] *= inv;
      adam_.update(name, v.mutable_value(), g);
    }
    adam_.advance();
    return true;
  }

  EventMatcherModel& model_;
  std::vector<ManifestEntry> entries_;
  std::string dir_;
  AdamW adam_;
  int64_t batch_ = 8, threads_ = 2, checkpoint_every_ = 100, log_every_ = 10;
  double window_ms_ = 64.0;
  double window_min_ms_ = 0.0, window_max_ms_ = 0.0;
  uint64_t seed_ = 1;
};

// Benchmark adapter: matches one manifest pair with the trained model at a
// given interval scale (base window from the model's eval config).
inline PairMatcher make_model_matcher(const EventMatcherModel& model, double base_window_ms) {
  return [&model, base_window_ms](const ManifestEntry& entry, const std::string& dir,
                                  double scale) -> std::vector<PixelMatch> {
    double window = base_window_ms * scale;
    EventStream a = trailing_window(read_events(dir + "/" + entry.events_a), window);
    MatchSet ms;
    if (entry.modality_b == "image") {
      ms = model.match_event_image(a, load_image01(dir + "/" + entry.image_b));
    } else {
      EventStream b = trailing_window(read_events(dir + "/" + entry.events_b), window);
      ms = model.match_events(a, b);
    }
    return ms.pixels;
  };
}

}  // namespace evmatch
