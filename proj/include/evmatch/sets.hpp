#pragma once

#include <cstdint>
#include <vector>

#include "evmatch/nn.hpp"

// Sparsity-aware event token selection: per-token halting scores over the
// temporal channels, an ACT-style schedule with remainder, a ponder loss,
// and the log-mass bias injected into spatial attention.

namespace evmatch {

struct HaltingParams {
  Var w1, b1, w2, b2;  // D -> hidden -> 1
};

inline HaltingParams make_halting_params(ParamStore& ps, const std::string& prefix, int64_t dim,
                                         int64_t hidden, Rng& rng) {
  HaltingParams p;
  p.w1 = ps.add(prefix + ".w1", init::xavier(rng, dim, hidden));
  p.b1 = ps.add(prefix + ".b1", Tensor({hidden}));
  p.w2 = ps.add(prefix + ".w2", init::xavier(rng, hidden, 1));
  p.b2 = ps.add(prefix + ".b2", Tensor({1}));
  return p;
}

// MLP + sigmoid halting head: tokens [T*S x D] -> h [T x S], h in (0,1).
inline Var halting_scores(const Var& tokens, const HaltingParams& p, int64_t bins, int64_t spatial) {
  require(tokens.rows() == bins * spatial, "halting_scores: token count mismatch");
  require(p.w1.rows() == tokens.cols(), "halting_scores: MLP input width mismatch");
  Var h = sigmoid(linear(gelu(linear(tokens, p.w1, p.b1)), p.w2, p.b2));
  return reshape(h, {bins, spatial});
}

// N_n = min { m : sum_{i<=m} h_n^i >= 1 - eps }, clamped to T; the halt
// channel index is 1-based (N_n = 1 means halt after the first channel).
inline std::vector<int64_t> halting_schedule(const Tensor& h /* [T x S] */, double eps) {
  require(eps > 0.0 && eps < 1.0, "halting_schedule: eps in (0,1)");
  int64_t bins = h.dim(0), spatial = h.dim(1);
  std::vector<int64_t> n_steps(static_cast<size_t>(spatial), bins);
  for (int64_t n = 0; n < spatial; ++n) {
    double cum = 0.0;
    for (int64_t c = 0; c < bins; ++c) {
      cum += h.at2(c, n);
      if (cum >= 1.0 - eps) {
        n_steps[static_cast<size_t>(n)] = c + 1;
        break;
      }
    }
  }
  return n_steps;
}

// Everything derived from one halting pass. `bias` row c (channel tau=c+1)
// is log(1 - sum_{i<=c} ... ) for live channels and -inf past N_n; gradients
// flow through h into both the bias and the remainder (soft training path).
struct HaltingState {
  Var h;                                    // [T x S]
  std::vector<int64_t> n_steps;             // per token, in [1, T]
  Var remainder;                            // [S x 1]
  Var bias;                                 // [T x S]
  Var ponder;                               // scalar mean(N_n + R_n)
  std::vector<std::vector<int64_t>> active; // per channel: tokens with N_n > c
};

inline HaltingState build_halting_state(const Var& h, double eps) {
  int64_t bins = h.shape()[0], spatial = h.shape()[1];
  HaltingState st;
  st.h = h;
  st.n_steps = halting_schedule(h.value(), eps);

  // prefix row c = sum of h rows [0, c); row 0 is zero.
  std::vector<Var> prefix_rows;
  prefix_rows.push_back(Var::constant(Tensor({1, spatial})));
  for (int64_t c = 1; c < bins; ++c)
    prefix_rows.push_back(add(prefix_rows.back(), slice_rows(h, c - 1, 1)));
  Var prefix = concat_rows(prefix_rows);  // [T x S]

  Tensor halted_mask({bins, spatial});
  st.active.assign(static_cast<size_t>(bins), {});
  for (int64_t c = 0; c < bins; ++c)
    for (int64_t n = 0; n < spatial; ++n) {
      if (c + 1 > st.n_steps[static_cast<size_t>(n)])
        halted_mask.at2(c, n) = 1.0;
      else
        st.active[static_cast<size_t>(c)].push_back(n);
    }
  Var ones = Var::constant(Tensor::full({bins, spatial}, 1.0));
  st.bias = masked_fill(vlog(sub(ones, prefix), 1e-12), std::move(halted_mask), kNegInf);

  std::vector<std::pair<int64_t, int64_t>> halt_rc;
  Tensor n_tensor({spatial, 1});
  halt_rc.reserve(static_cast<size_t>(spatial));
  for (int64_t n = 0; n < spatial; ++n) {
    halt_rc.emplace_back(st.n_steps[static_cast<size_t>(n)] - 1, n);
    n_tensor[n] = static_cast<double>(st.n_steps[static_cast<size_t>(n)]);
  }
  st.remainder = sub(Var::constant(Tensor::full({spatial, 1}, 1.0)), gather_entries(prefix, halt_rc));
  st.ponder = mean_all(add(Var::constant(std::move(n_tensor)), st.remainder));
  return st;
}

// A halting state that injects nothing: zero bias, full schedule, R = 1.
// Used by the SETS-off equivalence harness.
inline HaltingState zero_halting_state(int64_t bins, int64_t spatial) {
  return build_halting_state(Var::constant(Tensor({bins, spatial})), 0.01);
}

// ---------------------------------------------------------------------------
// FLOPs accounting for the spatial-attention pruning claim
// ---------------------------------------------------------------------------

// MACs of one spatial self-attention pass over `tokens` active tokens:
// Q/K/V/O projections plus the QK^T and AV products.
inline uint64_t spatial_attention_macs(int64_t tokens, int64_t dim) {
  auto t = static_cast<uint64_t>(tokens), d = static_cast<uint64_t>(dim);
  return 4 * t * d * d + 2 * t * t * d;
}

// Score/AV MACs only (no projections) of one separable interleave round:
// spatial T*S^2 pairs + temporal S*T^2 pairs, 2*D MACs per pair.
inline uint64_t separable_score_macs(int64_t bins, int64_t spatial, int64_t dim) {
  auto t = static_cast<uint64_t>(bins), s = static_cast<uint64_t>(spatial),
       d = static_cast<uint64_t>(dim);
  return 2 * d * (t * s * s + s * t * t);
}

// Same counting scope for dense joint spatio-temporal attention.
inline uint64_t dense_joint_score_macs(int64_t bins, int64_t spatial, int64_t dim) {
  auto n = static_cast<uint64_t>(bins * spatial), d = static_cast<uint64_t>(dim);
  return 2 * d * n * n;
}

struct FlopsReport {
  uint64_t dense_spatial = 0;   // all T channels, all S tokens
  uint64_t pruned_spatial = 0;  // halted tokens skipped per channel
  double reduction_percent = 0.0;
  std::vector<int64_t> active_per_channel;
};

// Spatial-attention MACs with and without the halting schedule, for
// `layers` interleave rounds (the schedule is shared across rounds).
inline FlopsReport flops_report(const std::vector<int64_t>& n_steps, int64_t bins, int64_t spatial,
                                int64_t dim, int64_t layers = 1) {
  require(static_cast<int64_t>(n_steps.size()) == spatial, "flops_report: schedule size mismatch");
  FlopsReport r;
  r.active_per_channel.assign(static_cast<size_t>(bins), 0);
  for (int64_t c = 0; c < bins; ++c) {
    int64_t a = 0;
    for (int64_t n = 0; n < spatial; ++n)
      if (n_steps[static_cast<size_t>(n)] >= c + 1) ++a;
    r.active_per_channel[static_cast<size_t>(c)] = a;
    r.dense_spatial += static_cast<uint64_t>(layers) * spatial_attention_macs(spatial, dim);
    r.pruned_spatial += static_cast<uint64_t>(layers) * spatial_attention_macs(a, dim);
  }
  r.reduction_percent =
      r.dense_spatial == 0
          ? 0.0
          : 100.0 * (1.0 - static_cast<double>(r.pruned_spatial) / static_cast<double>(r.dense_spatial));
  return r;
}

}  // namespace evmatch
