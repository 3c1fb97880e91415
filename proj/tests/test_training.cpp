#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "evmatch/cli.hpp"
#include "evmatch/trainer.hpp"

using namespace evmatch;

namespace {

// Tiny but non-degenerate setup: 48x48 inputs, 6x6 coarse grid.
RunConfig tiny_config() {
  RunConfig cfg;
  cfg.set("model.width", "48");
  cfg.set("model.height", "48");
  cfg.set("model.bins", "2");
  cfg.set("model.dim", "32");
  cfg.set("model.fine_dim", "16");
  cfg.set("model.n_interleave", "1");
  cfg.set("model.n_refine", "1");
  cfg.set("model.heads", "2");
  cfg.set("matcher.iters", "1");
  cfg.set("train.steps", "120");
  cfg.set("train.batch", "4");
  cfg.set("train.lr", "1e-3");
  cfg.set("train.checkpoint_every", "0");
  cfg.set("train.window_ms", "48");
  cfg.set("data.width", "48");
  cfg.set("data.height", "48");
  cfg.set("data.focal", "55");
  cfg.set("data.texture", "128");
  cfg.set("data.duration_s", "0.1");
  cfg.set("data.fps", "500");
  cfg.set("data.pairs", "12");
  cfg.set("data.rot_deg", "4");
  cfg.set("data.trans", "0.05");
  cfg.set("data.baseline_rot_deg", "4");
  cfg.set("data.baseline_trans", "0.06");
  cfg.set("data.two_plane_fraction", "0");
  cfg.set("eval.window_ms", "48");
  return cfg;
}

struct DatasetFixture {
  std::string dir;
  Manifest manifest;

  explicit DatasetFixture(const RunConfig& cfg, const std::string& name) {
    dir = "/tmp/evm_train_" + name;
    std::filesystem::remove_all(dir);
    REQUIRE(cli::cmd_synth(cfg, dir, std::cout) == 0);
    manifest = read_manifest(dir + "/manifest.jsonl");
  }
  ~DatasetFixture() { std::filesystem::remove_all(dir); }
};

bool params_equal(const ParamStore& a, const ParamStore& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, v] : a.all()) {
    if (!b.has(name)) return false;
    if (!(v.value().vec() == b.get(name).value().vec())) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("training pipeline", "[slow]") {
  RunConfig cfg = tiny_config();
  DatasetFixture data(cfg, "main");
  REQUIRE(data.manifest.entries.size() == 12);
  REQUIRE(data.manifest.config_echo == cfg.to_text());

  SECTION("zero steps leaves the checkpoint at initialization") {
    RunConfig cfg0 = cfg;
    cfg0.set("train.steps", "0");
    EventMatcherModel fresh(cfg0);
    EventMatcherModel model(cfg0);
    Trainer trainer(model, data.manifest.entries, data.dir);
    TrainResult r = trainer.run("/tmp/evm_ck0.bin");
    REQUIRE_FALSE(r.aborted);
    REQUIRE(r.final_step == 0);
    EventMatcherModel loaded = EventMatcherModel::load("/tmp/evm_ck0.bin");
    REQUIRE(params_equal(fresh.params(), loaded.params()));
    std::remove("/tmp/evm_ck0.bin");
  }

  SECTION("loss decreases and the trained model self-matches") {
    EventMatcherModel model(cfg);
    Trainer trainer(model, data.manifest.entries, data.dir);
    TrainResult r = trainer.run("");
    REQUIRE_FALSE(r.aborted);
    REQUIRE(r.history.size() == 120);
    double early = 0, late = 0;
    for (int i = 0; i < 20; ++i) {
      early += r.history[static_cast<size_t>(i)].total;
      late += r.history[r.history.size() - 20 + static_cast<size_t>(i)].total;
    }
    REQUIRE(late < early);

    // self-matching: identical windows -> identity coarse cells
    EventStream ev = trailing_window(read_events(data.dir + "/" + data.manifest.entries[0].events_a),
                                     cfg.get_double("train.window_ms"));
    MatchSet ms = model.match_events(ev, ev);
    REQUIRE(ms.coarse.size() >= 10);
    int64_t identity = 0;
    for (const CoarseMatch& m : ms.coarse) identity += m.ia == m.ib ? 1 : 0;
    REQUIRE(static_cast<double>(identity) >= 0.95 * static_cast<double>(ms.coarse.size()));

    // determinism of inference
    MatchSet ms2 = model.match_events(ev, ev);
    REQUIRE(ms2.pixels.size() == ms.pixels.size());
    for (size_t i = 0; i < ms.pixels.size(); ++i) {
      REQUIRE(ms.pixels[i].bx == ms2.pixels[i].bx);
      REQUIRE(ms.pixels[i].confidence == ms2.pixels[i].confidence);
    }

    // empty input is flagged, not fatal
    EventStream empty;
    empty.width = 48;
    empty.height = 48;
    MatchSet es = model.match_events(empty, ev);
    REQUIRE(es.empty_input);
    REQUIRE(es.pixels.empty());

    // match file round-trips through the eval-side parser
    write_matches(ms.pixels, {{"pair", "self"}}, "/tmp/evm_matches_rt.txt");
    MatchFile mf = read_matches("/tmp/evm_matches_rt.txt");
    REQUIRE(mf.matches.size() == ms.pixels.size());
    REQUIRE(mf.header.at("pair") == "self");
    for (size_t i = 0; i < mf.matches.size(); ++i)
      REQUIRE(mf.matches[i].ax == Catch::Approx(ms.pixels[i].ax).margin(1e-6));
    std::remove("/tmp/evm_matches_rt.txt");
  }

  SECTION("resume at step k continues bitwise-identically") {
    RunConfig cfg_short = cfg;
    cfg_short.set("train.steps", "16");

    EventMatcherModel uninterrupted(cfg_short);
    Trainer t_full(uninterrupted, data.manifest.entries, data.dir);
    TrainResult full = t_full.run("");
    REQUIRE_FALSE(full.aborted);

    EventMatcherModel half_model(cfg_short);
    {
      EventMatcherModel first(cfg_short);
      Trainer t8(first, data.manifest.entries, data.dir);
      t8.run("", nullptr, 8);  // interrupted at step 8
      t8.save_checkpoint_to("/tmp/evm_resume_ck.bin");
    }
    Trainer t_resume(half_model, data.manifest.entries, data.dir);
    t_resume.resume_from("/tmp/evm_resume_ck.bin");
    REQUIRE(t_resume.optimizer().step() == 8);
    TrainResult rest = t_resume.run("");
    REQUIRE_FALSE(rest.aborted);
    REQUIRE(params_equal(uninterrupted.params(), half_model.params()));
    std::remove("/tmp/evm_resume_ck.bin");
  }
}

TEST_CASE("event-to-image pairs train and match through the image branch", "[slow]") {
  RunConfig cfg = tiny_config();
  cfg.set("data.image_fraction", "1");
  cfg.set("data.pairs", "6");
  cfg.set("train.steps", "6");
  cfg.set("train.batch", "2");
  DatasetFixture data(cfg, "image");
  REQUIRE(data.manifest.entries.size() == 6);
  for (const auto& e : data.manifest.entries) REQUIRE(e.modality_b == "image");

  EventMatcherModel model(cfg);
  Trainer trainer(model, data.manifest.entries, data.dir);
  TrainResult r = trainer.run("");
  REQUIRE_FALSE(r.aborted);
  REQUIRE(r.history.back().pairs_used > 0);

  EventStream ev = trailing_window(read_events(data.dir + "/" + data.manifest.entries[0].events_a),
                                   cfg.get_double("train.window_ms"));
  Tensor img = load_image01(data.dir + "/" + data.manifest.entries[0].image_b);
  MatchSet ms = model.match_event_image(ev, img);
  MatchSet ms2 = model.match_event_image(ev, img);
  REQUIRE(ms.pixels.size() == ms2.pixels.size());  // deterministic
  // image tokens take the T=1 path: no halting schedule on view B
  auto vb = model.encode_image(img);
  REQUIRE(vb.n_steps.empty());
  REQUIRE_FALSE(vb.ponder.defined());
}

TEST_CASE("geometry mismatch against the checkpoint config is a configuration error") {
  RunConfig cfg = tiny_config();
  EventMatcherModel model(cfg);
  EventStream wrong;
  wrong.width = 32;
  wrong.height = 48;
  wrong.events.push_back({1, 1, 10, 1});
  REQUIRE_THROWS_WITH(model.encode_events(wrong, false),
                      Catch::Matchers::ContainsSubstring("geometry"));
}
