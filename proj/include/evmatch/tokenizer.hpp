#pragma once

#include "evmatch/autograd.hpp"
#include "evmatch/nn.hpp"
#include "evmatch/voxel.hpp"

namespace evmatch {

// Patch-token view of a voxel (or image): tokens is [T*S x D] with
// S = grid_h * grid_w spatial cells, channel-major (bin 0 rows first).
struct TokenGrid {
  Var tokens;
  int64_t bins = 0;
  int64_t grid_h = 0;
  int64_t grid_w = 0;
  int64_t dim = 0;
  int64_t patch = 0;
  int64_t spatial() const { return grid_h * grid_w; }
};

struct TokenizerParams {
  Var proj_w;       // [patch^2 x D], shared across bins
  Var proj_b;       // [D]
  Var pos_spatial;  // [S x D] learned spatial encoding
  Var pos_temporal; // [T x D] learned per-bin encoding
};

inline TokenizerParams make_tokenizer_params(ParamStore& ps, const std::string& prefix,
                                             int64_t patch, int64_t bins, int64_t dim,
                                             int64_t grid_h, int64_t grid_w, Rng& rng,
                                             int64_t in_per_patch = -1) {
  if (in_per_patch < 0) in_per_patch = patch * patch;
  TokenizerParams p;
  p.proj_w = ps.add(prefix + ".proj_w", init::xavier(rng, in_per_patch, dim));
  p.proj_b = ps.add(prefix + ".proj_b", Tensor({dim}));
  p.pos_spatial = ps.add(prefix + ".pos_spatial", rng.normal_tensor({grid_h * grid_w, dim}, 0.02));
  p.pos_temporal = ps.add(prefix + ".pos_temporal", rng.normal_tensor({bins, dim}, 0.02));
  return p;
}

// Standalone variant for tests (params not registered anywhere).
inline TokenizerParams make_tokenizer_params_raw(int64_t patch, int64_t bins, int64_t dim,
                                                 int64_t grid_h, int64_t grid_w, Rng& rng,
                                                 int64_t in_per_patch = -1) {
  if (in_per_patch < 0) in_per_patch = patch * patch;
  TokenizerParams p;
  p.proj_w = Var::param(init::xavier(rng, in_per_patch, dim));
  p.proj_b = Var::param(Tensor({dim}));
  p.pos_spatial = Var::param(rng.normal_tensor({grid_h * grid_w, dim}, 0.02));
  p.pos_temporal = Var::param(rng.normal_tensor({bins, dim}, 0.02));
  return p;
}

// Flattens (possibly overlapping, zero-padded) patch windows of a plane
// into rows: output [out_h*out_w x patch^2], window origin stride `stride`.
inline Tensor extract_patches(const double* plane, int64_t height, int64_t width, int64_t patch,
                              int64_t stride, int64_t out_h, int64_t out_w) {
  Tensor out({out_h * out_w, patch * patch});
  int64_t row = 0;
  for (int64_t gy = 0; gy < out_h; ++gy) {
    for (int64_t gx = 0; gx < out_w; ++gx, ++row) {
      double* dst = out.data() + row * patch * patch;
      for (int64_t py = 0; py < patch; ++py) {
        int64_t y = gy * stride + py;
        for (int64_t px = 0; px < patch; ++px) {
          int64_t x = gx * stride + px;
          dst[py * patch + px] = (y < height && x < width) ? plane[y * width + x] : 0.0;
        }
      }
    }
  }
  return out;
}

namespace detail {

inline Var add_positional(const Var& projected, const TokenizerParams& p, int64_t bins, int64_t spatial) {
  std::vector<int64_t> sp_idx(static_cast<size_t>(bins * spatial));
  std::vector<int64_t> tm_idx(static_cast<size_t>(bins * spatial));
  for (int64_t c = 0; c < bins; ++c)
    for (int64_t n = 0; n < spatial; ++n) {
      sp_idx[static_cast<size_t>(c * spatial + n)] = n;
      tm_idx[static_cast<size_t>(c * spatial + n)] = c;
    }
  Var pe_s = gather_rows(p.pos_spatial, std::move(sp_idx));
  Var pe_t = gather_rows(p.pos_temporal, std::move(tm_idx));
  return add(projected, add(pe_s, pe_t));
}

}  // namespace detail

// Per-bin non-overlapping patches -> shared linear projection -> plus
// learned spatial and per-bin temporal encodings.
inline TokenGrid tokenize(const EventVolume& vol, int64_t patch, const TokenizerParams& p) {
  require(patch >= 1, "tokenize: patch must be >= 1");
  int64_t gh = (vol.height + patch - 1) / patch;
  int64_t gw = (vol.width + patch - 1) / patch;
  int64_t spatial = gh * gw;
  require(p.proj_w.rows() == patch * patch, "tokenize: projection shaped for different patch");
  require(p.pos_spatial.rows() == spatial, "tokenize: spatial encoding shaped for different grid");
  require(p.pos_temporal.rows() == vol.bins, "tokenize: temporal encoding shaped for different bin count");
  int64_t dim = p.proj_w.cols();
  Tensor patches({vol.bins * spatial, patch * patch});
  for (int64_t c = 0; c < vol.bins; ++c) {
    Tensor slice = extract_patches(vol.data.data() + c * vol.height * vol.width, vol.height,
                                   vol.width, patch, patch, gh, gw);
    std::copy(slice.data(), slice.data() + slice.numel(), patches.data() + c * spatial * patch * patch);
  }
  Var projected = linear(Var::constant(std::move(patches)), p.proj_w, p.proj_b);
  TokenGrid g;
  g.tokens = detail::add_positional(projected, p, vol.bins, spatial);
  g.bins = vol.bins;
  g.grid_h = gh;
  g.grid_w = gw;
  g.dim = dim;
  g.patch = patch;
  return g;
}

// Ablation path (no temporal channels): all bins of a patch flattened into
// one embedding, yielding a T=1 grid. proj_w must be [B*patch^2 x D].
inline TokenGrid tokenize_flat(const EventVolume& vol, int64_t patch, const TokenizerParams& p) {
  int64_t gh = (vol.height + patch - 1) / patch;
  int64_t gw = (vol.width + patch - 1) / patch;
  int64_t spatial = gh * gw;
  int64_t per_patch = patch * patch;
  require(p.proj_w.rows() == vol.bins * per_patch, "tokenize_flat: projection shape mismatch");
  require(p.pos_spatial.rows() == spatial, "tokenize_flat: spatial encoding shape mismatch");
  Tensor patches({spatial, vol.bins * per_patch});
  for (int64_t c = 0; c < vol.bins; ++c) {
    Tensor slice = extract_patches(vol.data.data() + c * vol.height * vol.width, vol.height,
                                   vol.width, patch, patch, gh, gw);
    for (int64_t n = 0; n < spatial; ++n)
      std::copy(slice.data() + n * per_patch, slice.data() + (n + 1) * per_patch,
                patches.data() + n * vol.bins * per_patch + c * per_patch);
  }
  Var projected = linear(Var::constant(std::move(patches)), p.proj_w, p.proj_b);
  TokenGrid g;
  g.tokens = detail::add_positional(projected, p, 1, spatial);
  g.bins = 1;
  g.grid_h = gh;
  g.grid_w = gw;
  g.dim = p.proj_w.cols();
  g.patch = patch;
  return g;
}

// Image branch: a grayscale image in [0,1] is tokenized as a T=1 volume
// through its own projection; encodings and backbone are shared.
inline TokenGrid tokenize_image(const Tensor& image /* [H x W] */, int64_t patch,
                                const TokenizerParams& p) {
  EventVolume v;
  v.data = image.reshaped({1, image.dim(0), image.dim(1)});
  v.bins = 1;
  v.height = image.dim(0);
  v.width = image.dim(1);
  TokenizerParams p1 = p;  // reuse spatial encoding; bin-0 temporal row
  return tokenize(v, patch, p1);
}

}  // namespace evmatch
