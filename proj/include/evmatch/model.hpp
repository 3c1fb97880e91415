#pragma once

#include <optional>

#include "evmatch/backbone.hpp"
#include "evmatch/config.hpp"
#include "evmatch/matcher.hpp"
#include "evmatch/synthgen.hpp"

// Full matching model: voxelizer + tokenizer + TAg backbone (+ SETS) +
// coarse/fine matcher, parameterized by a RunConfig and checkpointable.

namespace evmatch {

struct MatchSet {
  std::vector<CoarseMatch> coarse;
  std::vector<FineMatch> fine;
  std::vector<PixelMatch> pixels;  // final subpixel correspondences
  double omega = 0.2;
  bool empty_input = false;
  FlopsReport flops;   // spatial-attention MACs (when SETS is enabled)
  Tensor agg_weights;  // view-A aggregation attention, for inspection
};

class EventMatcherModel {
 public:
  explicit EventMatcherModel(const RunConfig& cfg) : cfg_(cfg) {
    bins_ = cfg.get_int("model.bins");
    patch_ = cfg.get_int("model.patch");
    width_ = cfg.get_int("model.width");
    height_ = cfg.get_int("model.height");
    tag_ = cfg.get_bool("model.tag");
    anchor_ = time_anchor_from_string(cfg.get_string("model.time_anchor"));
    grid_h_ = (height_ + patch_ - 1) / patch_;
    grid_w_ = (width_ + patch_ - 1) / patch_;
    bcfg_.n_interleave = cfg.get_int("model.n_interleave");
    bcfg_.n_refine = cfg.get_int("model.n_refine");
    bcfg_.dim = cfg.get_int("model.dim");
    bcfg_.fine_dim = cfg.get_int("model.fine_dim");
    bcfg_.heads = cfg.get_int("model.heads");
    bcfg_.mlp_ratio = cfg.get_int("model.mlp_ratio");
    bcfg_.validate();
    sets_enabled_ = cfg.get_bool("sets.enabled");
    sets_eps_ = cfg.get_double("sets.eps");
    hard_prune_ = cfg.get_bool("sets.hard_prune");
    mcfg_.n_iters = cfg.get_int("matcher.iters");
    mcfg_.temperature = cfg.get_double("matcher.temperature");
    mcfg_.omega = cfg.get_double("matcher.omega");
    mcfg_.fine_window = cfg.get_int("matcher.window");
    mcfg_.alpha = cfg.get_double("loss.alpha");
    mcfg_.beta = cfg.get_double("loss.beta");
    mcfg_.gamma = cfg.get_double("loss.gamma");

    Rng rng(static_cast<uint64_t>(cfg.get_int("train.seed")) ^ 0xabcdef12ULL);
    int64_t model_bins = tag_ ? bins_ : 1;
    if (tag_) {
      tok_ = make_tokenizer_params(ps_, "tok", patch_, bins_, bcfg_.dim, grid_h_, grid_w_, rng);
    } else {
      // temporal channels flattened into the embedding (ablation I)
      tok_ = make_tokenizer_params(ps_, "tok_flat", patch_, 1, bcfg_.dim, grid_h_, grid_w_, rng,
                                   bins_ * patch_ * patch_);
    }
    // image branch: own projection and bin encoding, shared spatial encoding
    tok_img_.proj_w = ps_.add("tok_img.proj_w", init::xavier(rng, patch_ * patch_, bcfg_.dim));
    tok_img_.proj_b = ps_.add("tok_img.proj_b", Tensor({bcfg_.dim}));
    tok_img_.pos_spatial = tok_.pos_spatial;
    tok_img_.pos_temporal = ps_.add("tok_img.pos_temporal", rng.normal_tensor({1, bcfg_.dim}, 0.02));
    if (sets_enabled_ && model_bins > 1)
      halting_ = make_halting_params(ps_, "halting", bcfg_.dim, cfg.get_int("sets.hidden"), rng);
    bb_ = make_backbone_params(ps_, "backbone", bcfg_, patch_, rng);
    matcher_ = make_matcher_params(ps_, "matcher", bcfg_.dim, bcfg_.mlp_ratio, mcfg_.n_iters, rng);
  }

  static EventMatcherModel load(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    EventMatcherModel model(RunConfig::from_text(ck.config_text));
    model.ps_.import_from(ck);
    return model;
  }

  void save(const std::string& path, const std::map<std::string, Tensor>& extra = {}) const {
    Checkpoint ck;
    ck.config_text = cfg_.to_text();
    ps_.export_to(ck);
    for (const auto& [k, v] : extra) ck.tensors[k] = v;
    save_checkpoint(ck, path);
  }

  const RunConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }
  const BackboneConfig& backbone_config() const { return bcfg_; }
  const MatcherConfig& matcher_config() const { return mcfg_; }
  int64_t grid_h() const { return grid_h_; }
  int64_t grid_w() const { return grid_w_; }
  int64_t spatial() const { return grid_h_ * grid_w_; }
  int64_t patch() const { return patch_; }
  int64_t bins() const { return bins_; }
  int64_t width() const { return width_; }
  int64_t height() const { return height_; }
  bool sets_enabled() const { return sets_enabled_; }
  double fine_cell_px() const { return static_cast<double>(patch_) / 2.0; }

  struct ViewForward {
    EncodeOut enc;
    Var ponder;                    // defined when SETS ran
    std::vector<int64_t> n_steps;  // halting schedule (empty when SETS off)
  };

  ViewForward encode_events(const EventStream& window, bool allow_hard_prune,
                            MacCounter* mac_spatial = nullptr) const {
    require(static_cast<int64_t>(window.width) == width_ &&
                static_cast<int64_t>(window.height) == height_,
            "encode_events: stream geometry does not match the checkpoint config");
    EventVolume vol = build_volume(window, bins_, anchor_);
    TokenGrid grid = tag_ ? tokenize(vol, patch_, tok_) : tokenize_flat(vol, patch_, tok_);
    return encode_grid(grid, finest_slice(vol), allow_hard_prune, mac_spatial);
  }

  // image: linear grayscale in [0,1], [H x W]
  ViewForward encode_image(const Tensor& image, MacCounter* mac_spatial = nullptr) const {
    require(image.dim(0) == height_ && image.dim(1) == width_,
            "encode_image: image geometry does not match the checkpoint config");
    TokenGrid grid = tokenize_image(image, patch_, tok_img_);
    return encode_grid(grid, image, false, mac_spatial);
  }

  struct PairForward {
    ViewForward a, b;
    Var feat_a, feat_b;  // post coarse transform
    Var smat, pmat;
    Var ponder;  // mean over views with SETS, undefined otherwise
  };

  PairForward transform_pair(ViewForward va, ViewForward vb) const {
    PairForward pf;
    pf.a = std::move(va);
    pf.b = std::move(vb);
    auto [fa, fb] =
        coarse_transform(matcher_, pf.a.enc.coarse, pf.b.enc.coarse, bcfg_.heads, mcfg_.n_iters);
    pf.feat_a = fa;
    pf.feat_b = fb;
    pf.smat = score_matrix(fa, fb);
    pf.pmat = dual_softmax(pf.smat, mcfg_.temp_or_default(bcfg_.dim));
    if (pf.a.ponder.defined() && pf.b.ponder.defined())
      pf.ponder = scale(add(pf.a.ponder, pf.b.ponder), 0.5);
    else if (pf.a.ponder.defined())
      pf.ponder = pf.a.ponder;
    else if (pf.b.ponder.defined())
      pf.ponder = pf.b.ponder;
    return pf;
  }

  MatchSet match_from_forward(const PairForward& pf) const {
    MatchSet out;
    out.omega = mcfg_.omega;
    out.agg_weights = pf.a.enc.agg_weights;
    out.coarse = mnn_select(pf.smat.value(), pf.pmat.value(), mcfg_.omega);
    const Tensor& fine_a = pf.a.enc.fine.value();
    const Tensor& fine_b = pf.b.enc.fine.value();
    FineGrid fga{&fine_a, 2 * grid_h_, 2 * grid_w_, fine_cell_px()};
    FineGrid fgb{&fine_b, 2 * grid_h_, 2 * grid_w_, fine_cell_px()};
    out.fine = fine_refine(out.coarse, fga, fgb, grid_w_, grid_w_, mcfg_.fine_window);
    out.pixels.reserve(out.fine.size());
    for (const FineMatch& m : out.fine)
      out.pixels.push_back({m.ax, m.ay, m.bx, m.by, m.confidence});
    if (!pf.a.n_steps.empty()) {
      out.flops = flops_report(pf.a.n_steps, bins_, spatial(), bcfg_.dim, bcfg_.n_interleave);
      if (!pf.b.n_steps.empty()) {
        FlopsReport fb = flops_report(pf.b.n_steps, bins_, spatial(), bcfg_.dim, bcfg_.n_interleave);
        out.flops.dense_spatial += fb.dense_spatial;
        out.flops.pruned_spatial += fb.pruned_spatial;
        out.flops.reduction_percent =
            100.0 * (1.0 - static_cast<double>(out.flops.pruned_spatial) /
                               static_cast<double>(out.flops.dense_spatial));
      }
    }
    return out;
  }

  // Full inference for an event pair; empty inputs yield a flagged result.
  MatchSet match_events(const EventStream& win_a, const EventStream& win_b) const {
    if (win_a.empty() || win_b.empty()) {
      MatchSet out;
      out.omega = mcfg_.omega;
      out.empty_input = true;
      return out;
    }
    return match_from_forward(
        transform_pair(encode_events(win_a, hard_prune_), encode_events(win_b, hard_prune_)));
  }

  MatchSet match_event_image(const EventStream& win_a, const Tensor& image) const {
    if (win_a.empty()) {
      MatchSet out;
      out.omega = mcfg_.omega;
      out.empty_input = true;
      return out;
    }
    return match_from_forward(transform_pair(encode_events(win_a, hard_prune_), encode_image(image)));
  }

  // Training losses for one pair (teacher-forced fine supervision).
  LossBreakdown pair_loss(const PairForward& pf, const CoarseGt& gt) const {
    return losses(pf.pmat, pf.a.enc.fine, pf.b.enc.fine, gt, grid_w_, grid_w_, 2 * grid_h_,
                  2 * grid_w_, 2 * grid_h_, 2 * grid_w_, fine_cell_px(), mcfg_, pf.ponder);
  }

  CoarseGt coarse_gt_from(const CorrespondenceGT& gt) const {
    WarpFn warp = [&gt](double ax, double ay, double& bx, double& by) {
      return gt.lookup(ax, ay, bx, by);
    };
    return build_coarse_gt(warp, grid_h_, grid_w_, grid_h_, grid_w_, static_cast<double>(patch_));
  }

 private:
  Tensor finest_slice(const EventVolume& vol) const {
    Tensor f({vol.height, vol.width});
    std::copy(vol.data.data(), vol.data.data() + f.numel(), f.data());
    return f;
  }

  ViewForward encode_grid(const TokenGrid& grid, const Tensor& finest, bool allow_hard_prune,
                          MacCounter* mac_spatial) const {
    ViewForward vf;
    std::optional<HaltingState> state;
    if (sets_enabled_ && grid.bins > 1 && halting_.w1.defined()) {
      Var h = halting_scores(grid.tokens, halting_, grid.bins, grid.spatial());
      state = build_halting_state(h, sets_eps_);
      vf.ponder = state->ponder;
      vf.n_steps = state->n_steps;
    }
    vf.enc = encode_tokens(bb_, bcfg_, grid, finest, state ? &*state : nullptr,
                           allow_hard_prune && hard_prune_, mac_spatial);
    return vf;
  }

  RunConfig cfg_;
  ParamStore ps_;
  BackboneConfig bcfg_;
  MatcherConfig mcfg_;
  TokenizerParams tok_, tok_img_;
  HaltingParams halting_;
  BackboneParams bb_;
  MatcherParams matcher_;
  int64_t bins_ = 4, patch_ = 8, width_ = 96, height_ = 96, grid_h_ = 12, grid_w_ = 12;
  bool tag_ = true, sets_enabled_ = true, hard_prune_ = false;
  double sets_eps_ = 0.01;
  TimeAnchor anchor_ = TimeAnchor::kEnd;
};

// Event window used everywhere: the trailing `window_ms` of a stream.
inline EventStream trailing_window(const EventStream& s, double window_ms) {
  if (s.empty()) return s;
  int64_t dur = static_cast<int64_t>(window_ms * 1e6);
  return slice_window(s, s.t_last() - dur + 1, dur);
}

}  // namespace evmatch
