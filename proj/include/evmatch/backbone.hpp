#pragma once

#include <optional>
#include <vector>

#include "evmatch/sets.hpp"
#include "evmatch/tokenizer.hpp"

// Separable spatio-temporal attention backbone with temporal aggregation
// and refinement: N_l rounds of (per-channel spatial attention, per-location
// temporal attention), cross-channel aggregation into the finest channel,
// N_r refinement blocks, and a light 2x fine-feature branch.

namespace evmatch {

struct BackboneConfig {
  int64_t n_interleave = 2;  // N_l
  int64_t n_refine = 4;      // N_r
  int64_t dim = 64;
  int64_t fine_dim = 32;
  int64_t heads = 4;
  int64_t mlp_ratio = 2;

  void validate() const {
    require(n_interleave >= 1 && n_refine >= 1, "backbone: N_l and N_r must be >= 1");
    require(dim % heads == 0, "backbone: D must be divisible by heads");
  }
};

struct FineParams {
  Var up_w, up_b;      // D -> 4*D_f learned 2x upsampling
  Var conv_w, conv_b;  // patch^2 -> D_f, stride patch/2 over the finest bin
  Var fuse_w, fuse_b;  // D_f -> D_f
  Var ln_g, ln_b;      // output norm, keeps fine correlations bounded
};

struct BackboneParams {
  std::vector<BlockParams> spatial;   // N_l
  std::vector<BlockParams> temporal;  // N_l
  Var agg_bias;                       // learnable query bias b in R^D
  std::vector<BlockParams> refine;    // N_r
  FineParams fine;
};

inline BackboneParams make_backbone_params(ParamStore& ps, const std::string& prefix,
                                           const BackboneConfig& cfg, int64_t patch, Rng& rng) {
  cfg.validate();
  BackboneParams p;
  for (int64_t l = 0; l < cfg.n_interleave; ++l) {
    p.spatial.push_back(
        make_block_params(ps, prefix + ".spatial" + std::to_string(l), cfg.dim, cfg.mlp_ratio, rng));
    p.temporal.push_back(
        make_block_params(ps, prefix + ".temporal" + std::to_string(l), cfg.dim, cfg.mlp_ratio, rng));
  }
  p.agg_bias = ps.add(prefix + ".agg_bias", rng.normal_tensor({cfg.dim}, 0.02));
  for (int64_t l = 0; l < cfg.n_refine; ++l)
    p.refine.push_back(
        make_block_params(ps, prefix + ".refine" + std::to_string(l), cfg.dim, cfg.mlp_ratio, rng));
  p.fine.up_w = ps.add(prefix + ".fine.up_w", init::xavier(rng, cfg.dim, 4 * cfg.fine_dim));
  p.fine.up_b = ps.add(prefix + ".fine.up_b", Tensor({4 * cfg.fine_dim}));
  p.fine.conv_w = ps.add(prefix + ".fine.conv_w", init::xavier(rng, patch * patch, cfg.fine_dim));
  p.fine.conv_b = ps.add(prefix + ".fine.conv_b", Tensor({cfg.fine_dim}));
  p.fine.fuse_w = ps.add(prefix + ".fine.fuse_w", init::xavier(rng, cfg.fine_dim, cfg.fine_dim));
  p.fine.fuse_b = ps.add(prefix + ".fine.fuse_b", Tensor({cfg.fine_dim}));
  p.fine.ln_g = ps.add(prefix + ".fine.ln_g", Tensor::full({cfg.fine_dim}, 1.0));
  p.fine.ln_b = ps.add(prefix + ".fine.ln_b", Tensor({cfg.fine_dim}));
  return p;
}

// Multi-head self-attention within each temporal channel. key_bias, when
// defined, is the [T x S] halting bias (column bias per key token).
inline Var spatial_attention(const BlockParams& p, const Var& tokens, int64_t bins, int64_t spatial,
                             int64_t heads, const Var& key_bias = {}, MacCounter* mac = nullptr,
                             std::vector<Tensor>* attn_out = nullptr) {
  require(tokens.rows() == bins * spatial, "spatial_attention: token count mismatch");
  Var bias_flat = key_bias.defined() ? reshape(key_bias, {bins * spatial}) : Var{};
  return transformer_block(p, tokens, tokens, heads, spatial, spatial, bias_flat, mac, attn_out);
}

// Hard-pruned variant for inference: tokens halted before a channel are
// excluded as queries and keys there and carried through unchanged.
// Active tokens still see the finite part of the halting bias.
inline Var spatial_attention_pruned(const BlockParams& p, const Var& tokens, int64_t bins,
                                    int64_t spatial, int64_t heads, const Var& key_bias,
                                    const std::vector<std::vector<int64_t>>& active,
                                    MacCounter* mac = nullptr) {
  std::vector<Var> parts;
  parts.reserve(static_cast<size_t>(bins));
  for (int64_t c = 0; c < bins; ++c) {
    const auto& act = active[static_cast<size_t>(c)];
    Var slice = slice_rows(tokens, c * spatial, spatial);
    if (act.empty()) {
      parts.push_back(slice);  // whole channel halted: copy-through
      continue;
    }
    int64_t a = static_cast<int64_t>(act.size());
    if (a == spatial) {
      Var bias_row = key_bias.defined() ? reshape(slice_rows(key_bias, c, 1), {spatial}) : Var{};
      parts.push_back(transformer_block(p, slice, slice, heads, spatial, spatial, bias_row, mac));
      continue;
    }
    std::vector<int64_t> act_idx = act;
    Var x_act = gather_rows(slice, act_idx);
    Var bias_act;
    if (key_bias.defined()) {
      std::vector<std::pair<int64_t, int64_t>> rc;
      rc.reserve(act.size());
      for (int64_t n : act) rc.emplace_back(c, n);
      bias_act = reshape(gather_entries(key_bias, std::move(rc)), {a});
    }
    Var out_act = transformer_block(p, x_act, x_act, heads, a, a, bias_act, mac);
    std::vector<int64_t> inact_idx;
    std::vector<int64_t> perm(static_cast<size_t>(spatial), -1);
    for (int64_t i = 0; i < a; ++i) perm[static_cast<size_t>(act[static_cast<size_t>(i)])] = i;
    for (int64_t n = 0; n < spatial; ++n)
      if (perm[static_cast<size_t>(n)] < 0) {
        perm[static_cast<size_t>(n)] = a + static_cast<int64_t>(inact_idx.size());
        inact_idx.push_back(n);
      }
    Var reassembled = inact_idx.empty()
                          ? out_act
                          : gather_rows(concat_rows({out_act, gather_rows(slice, inact_idx)}), perm);
    parts.push_back(reassembled);
  }
  return concat_rows(parts);
}

// Multi-head self-attention across the T channels, independently per
// spatial location. T=1 degenerates to the residual MLP path.
inline Var temporal_attention(const BlockParams& p, const Var& tokens, int64_t bins, int64_t spatial,
                              int64_t heads, MacCounter* mac = nullptr,
                              std::vector<Tensor>* attn_out = nullptr) {
  require(tokens.rows() == bins * spatial, "temporal_attention: token count mismatch");
  std::vector<int64_t> to_loc(static_cast<size_t>(bins * spatial));
  std::vector<int64_t> to_chan(static_cast<size_t>(bins * spatial));
  for (int64_t c = 0; c < bins; ++c)
    for (int64_t n = 0; n < spatial; ++n) {
      to_loc[static_cast<size_t>(n * bins + c)] = c * spatial + n;
      to_chan[static_cast<size_t>(c * spatial + n)] = n * bins + c;
    }
  Var x = gather_rows(tokens, std::move(to_loc));
  Var y = transformer_block(p, x, x, heads, bins, bins, {}, mac, attn_out);
  return gather_rows(y, std::move(to_chan));
}

// Cross-channel aggregation: per location, query = channel-0 token plus the
// learnable bias; keys and values are the remaining channels' raw tokens.
// The attention output is added residually to channel 0. T=1 is the
// identity on channel 0.
inline Var aggregate(const Var& tokens, const Var& agg_bias, int64_t bins, int64_t spatial,
                     Tensor* weights_out = nullptr) {
  require(tokens.rows() == bins * spatial, "aggregate: token count mismatch");
  Var ch0 = slice_rows(tokens, 0, spatial);
  if (bins == 1) return ch0;
  int64_t dim = tokens.cols();
  Var q = bias_add(ch0, agg_bias);
  std::vector<int64_t> rest_idx;
  rest_idx.reserve(static_cast<size_t>((bins - 1) * spatial));
  for (int64_t n = 0; n < spatial; ++n)
    for (int64_t c = 1; c < bins; ++c) rest_idx.push_back(c * spatial + n);
  Var rest = gather_rows(tokens, std::move(rest_idx));
  double scale_f = 1.0 / std::sqrt(static_cast<double>(dim));
  Var att = grouped_sdpa(q, rest, rest, 1, bins - 1, scale_f, {}, weights_out);
  return add(ch0, att);
}

struct EncodeOut {
  Var coarse;          // [S x D]
  Var fine;            // [4S x D_f], 2x grid
  Tensor agg_weights;  // [S x (T-1)] aggregation attention, empty if T=1
  int64_t grid_h = 0, grid_w = 0;
};

// Full backbone pass over a token grid. `finest_slice` is the bin-0 plane
// feeding the fine conv path (the image itself for the image branch).
// halting: optional SETS state; hard_prune switches the inference-time
// skipping on. mac_spatial counts only the spatial-attention layers.
inline EncodeOut encode_tokens(const BackboneParams& bp, const BackboneConfig& cfg,
                               const TokenGrid& grid, const Tensor& finest_slice,
                               const HaltingState* halting = nullptr, bool hard_prune = false,
                               MacCounter* mac_spatial = nullptr, MacCounter* mac_temporal = nullptr) {
  cfg.validate();
  int64_t bins = grid.bins, spatial = grid.spatial();
  Var t = grid.tokens;
  Var bias = halting ? halting->bias : Var{};
  for (int64_t l = 0; l < cfg.n_interleave; ++l) {
    t = (halting && hard_prune)
            ? spatial_attention_pruned(bp.spatial[static_cast<size_t>(l)], t, bins, spatial,
                                       cfg.heads, bias, halting->active, mac_spatial)
            : spatial_attention(bp.spatial[static_cast<size_t>(l)], t, bins, spatial, cfg.heads,
                                bias, mac_spatial);
    t = temporal_attention(bp.temporal[static_cast<size_t>(l)], t, bins, spatial, cfg.heads,
                           mac_temporal);
  }
  EncodeOut out;
  out.grid_h = grid.grid_h;
  out.grid_w = grid.grid_w;
  Var agg = aggregate(t, bp.agg_bias, bins, spatial, &out.agg_weights);
  Var coarse = agg;
  for (const BlockParams& blk : bp.refine)
    coarse = transformer_block_self(blk, coarse, cfg.heads);
  out.coarse = coarse;

  // Fine branch: learned 2x upsampling of coarse features fused with a
  // stride-patch/2 conv path over the finest-bin slice.
  int64_t patch = grid.patch;
  require(patch % 2 == 0, "fine branch needs an even patch size");
  int64_t fh = 2 * grid.grid_h, fw = 2 * grid.grid_w;
  Var up = linear(coarse, bp.fine.up_w, bp.fine.up_b);  // [S x 4*D_f]
  Var up_cells = reshape(up, {spatial * 4, cfg.fine_dim});
  std::vector<int64_t> perm(static_cast<size_t>(fh * fw));
  for (int64_t fy = 0; fy < fh; ++fy)
    for (int64_t fx = 0; fx < fw; ++fx) {
      int64_t s = (fy / 2) * grid.grid_w + fx / 2;
      int64_t sub = (fy % 2) * 2 + fx % 2;
      perm[static_cast<size_t>(fy * fw + fx)] = s * 4 + sub;
    }
  Var up_fine = gather_rows(up_cells, std::move(perm));
  Tensor patches = extract_patches(finest_slice.data(), finest_slice.dim(0), finest_slice.dim(1),
                                   patch, patch / 2, fh, fw);
  Var conv = linear(Var::constant(std::move(patches)), bp.fine.conv_w, bp.fine.conv_b);
  out.fine = layer_norm(linear(gelu(add(up_fine, conv)), bp.fine.fuse_w, bp.fine.fuse_b),
                        bp.fine.ln_g, bp.fine.ln_b);
  return out;
}

}  // namespace evmatch
