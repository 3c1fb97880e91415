#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "evmatch/nn.hpp"

// Coarse-to-fine semi-dense matching: alternating self/cross attention over
// the two coarse feature maps, a correlation score matrix with dual-softmax
// matching probabilities, mutual-nearest-neighbor selection, local fine
// matching, and 3x3 expectation sub-pixel refinement.

namespace evmatch {

struct MatcherConfig {
  int64_t n_iters = 4;       // coarse self/cross rounds
  double temperature = 0.0;  // logit scale for the score matrix; 0 -> 1/sqrt(D)
  double omega = 0.2;        // confidence threshold on P
  int64_t fine_window = 5;   // odd local window (fine cells)
  double alpha = 1.0;        // L_f weight
  double beta = 0.25;        // L_l weight
  double gamma = 0.01;       // ponder weight

  double temp_or_default(int64_t dim) const {
    return temperature > 0.0 ? temperature : 1.0 / std::sqrt(static_cast<double>(dim));
  }
};

struct MatcherParams {
  std::vector<BlockParams> self_blocks;   // shared between the two views
  std::vector<BlockParams> cross_blocks;  // shared between both directions
  Var final_ln_g, final_ln_b;             // keeps correlation logits bounded
};

inline MatcherParams make_matcher_params(ParamStore& ps, const std::string& prefix, int64_t dim,
                                         int64_t mlp_ratio, int64_t n_iters, Rng& rng) {
  MatcherParams p;
  for (int64_t i = 0; i < n_iters; ++i) {
    p.self_blocks.push_back(
        make_block_params(ps, prefix + ".self" + std::to_string(i), dim, mlp_ratio, rng));
    p.cross_blocks.push_back(
        make_block_params(ps, prefix + ".cross" + std::to_string(i), dim, mlp_ratio, rng));
  }
  p.final_ln_g = ps.add(prefix + ".final_ln_g", Tensor::full({dim}, 1.0));
  p.final_ln_b = ps.add(prefix + ".final_ln_b", Tensor({dim}));
  return p;
}

// n_iters rounds of (self-attention per view, cross-attention A<->B with
// shared weights), then a shared output norm. n_iters = 0 applies only the
// norm when its params exist; identity otherwise.
inline std::pair<Var, Var> coarse_transform(const MatcherParams& p, Var feat_a, Var feat_b,
                                            int64_t heads, int64_t n_iters,
                                            MacCounter* mac = nullptr) {
  require(feat_a.cols() == feat_b.cols(), "coarse_transform: width mismatch");
  require(n_iters <= static_cast<int64_t>(p.self_blocks.size()), "coarse_transform: too few blocks");
  for (int64_t i = 0; i < n_iters; ++i) {
    const BlockParams& sb = p.self_blocks[static_cast<size_t>(i)];
    const BlockParams& cb = p.cross_blocks[static_cast<size_t>(i)];
    feat_a = transformer_block_self(sb, feat_a, heads, {}, mac);
    feat_b = transformer_block_self(sb, feat_b, heads, {}, mac);
    Var a2 = transformer_block(cb, feat_a, feat_b, heads, feat_a.rows(), feat_b.rows(), {}, mac);
    Var b2 = transformer_block(cb, feat_b, feat_a, heads, feat_b.rows(), feat_a.rows(), {}, mac);
    feat_a = a2;
    feat_b = b2;
  }
  if (n_iters > 0 && p.final_ln_g.defined()) {
    feat_a = layer_norm(feat_a, p.final_ln_g, p.final_ln_b);
    feat_b = layer_norm(feat_b, p.final_ln_g, p.final_ln_b);
  }
  return {feat_a, feat_b};
}

// Raw correlation score matrix S = A B^T, [M_A x M_B].
inline Var score_matrix(const Var& feat_a, const Var& feat_b) {
  return matmul(feat_a, transpose2d(feat_b));
}

// P(i,j) = softmax_row(S * temp)(i,j) * softmax_col(S * temp)(i,j).
inline Var dual_softmax(const Var& smat, double temp) {
  Var scaled = scale(smat, temp);
  Var rows = softmax_rows(scaled);
  Var cols = transpose2d(softmax_rows(transpose2d(scaled)));
  return mul(rows, cols);
}

struct CoarseMatch {
  int64_t ia = 0;
  int64_t ib = 0;
  double confidence = 0.0;
};

// Mutual nearest neighbors on S (argmax with lowest-index tie break),
// gated by P > omega. Deterministic; an empty result is valid.
inline std::vector<CoarseMatch> mnn_select(const Tensor& smat, const Tensor& pmat, double omega) {
  require(smat.rank() == 2 && smat.same_shape(pmat), "mnn_select: S/P shape mismatch");
  int64_t ma = smat.dim(0), mb = smat.dim(1);
  std::vector<int64_t> row_arg(static_cast<size_t>(ma), 0);
  std::vector<int64_t> col_arg(static_cast<size_t>(mb), 0);
  for (int64_t i = 0; i < ma; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < mb; ++j)
      if (smat.at2(i, j) > best) {
        best = smat.at2(i, j);
        row_arg[static_cast<size_t>(i)] = j;
      }
  }
  for (int64_t j = 0; j < mb; ++j) {
    double best = -std::numeric_limits<double>::infinity();
    for (int64_t i = 0; i < ma; ++i)
      if (smat.at2(i, j) > best) {
        best = smat.at2(i, j);
        col_arg[static_cast<size_t>(j)] = i;
      }
  }
  std::vector<CoarseMatch> out;
  for (int64_t i = 0; i < ma; ++i) {
    int64_t j = row_arg[static_cast<size_t>(i)];
    if (col_arg[static_cast<size_t>(j)] == i && pmat.at2(i, j) > omega)
      out.push_back({i, j, pmat.at2(i, j)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fine level
// ---------------------------------------------------------------------------

struct FineGrid {
  const Tensor* feat = nullptr;  // [fh*fw x D_f]
  int64_t fh = 0, fw = 0;
  double cell_px = 0.0;  // fine cell side in input pixels
};

struct FineMatch {
  int64_t ia = 0, ib = 0;      // coarse cells
  int64_t fa = 0, fb = 0;      // fine cells (global indices)
  double ax = 0.0, ay = 0.0;   // A endpoint, input pixels
  double bx = 0.0, by = 0.0;   // B endpoint after 3x3 expectation, input pixels
  double confidence = 0.0;
  bool clamped = false;
};

namespace detail {

// Window origin for an odd w x w window centered at `center`, clamped.
inline int64_t window_origin(int64_t center, int64_t w, int64_t extent, bool& clamped) {
  int64_t o = center - w / 2;
  if (o < 0) {
    o = 0;
    clamped = true;
  }
  if (o + w > extent) {
    o = extent - w;
    clamped = true;
  }
  return o;
}

}  // namespace detail

// Per coarse match: crop w x w fine windows around both endpoints, pick the
// best mutual fine cell pair, then soften a 3x3 neighborhood around the B
// cell into a probability and take the expectation over cell centers.
inline std::vector<FineMatch> fine_refine(const std::vector<CoarseMatch>& coarse,
                                          const FineGrid& fa, const FineGrid& fb,
                                          int64_t coarse_w_a, int64_t coarse_w_b, int64_t w) {
  require(w >= 1 && w % 2 == 1, "fine_refine: window must be odd");
  require(w <= fa.fh && w <= fa.fw && w <= fb.fh && w <= fb.fw,
          "fine_refine: window larger than fine grid");
  int64_t dim = fa.feat->cols();
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<FineMatch> out;
  out.reserve(coarse.size());
  for (const CoarseMatch& cm : coarse) {
    FineMatch m;
    m.ia = cm.ia;
    m.ib = cm.ib;
    m.confidence = cm.confidence;
    int64_t acy = 2 * (cm.ia / coarse_w_a), acx = 2 * (cm.ia % coarse_w_a);
    int64_t bcy = 2 * (cm.ib / coarse_w_b), bcx = 2 * (cm.ib % coarse_w_b);
    int64_t aoy = detail::window_origin(acy, w, fa.fh, m.clamped);
    int64_t aox = detail::window_origin(acx, w, fa.fw, m.clamped);
    int64_t boy = detail::window_origin(bcy, w, fb.fh, m.clamped);
    int64_t box = detail::window_origin(bcx, w, fb.fw, m.clamped);

    // best mutual pair == global argmax of the window correlation
    double best = -std::numeric_limits<double>::infinity();
    int64_t best_a = 0, best_b = 0;
    for (int64_t ai = 0; ai < w * w; ++ai) {
      int64_t arow = (aoy + ai / w) * fa.fw + aox + ai % w;
      for (int64_t bi = 0; bi < w * w; ++bi) {
        int64_t brow = (boy + bi / w) * fb.fw + box + bi % w;
        double corr = 0;
        for (int64_t d = 0; d < dim; ++d) corr += fa.feat->at2(arow, d) * fb.feat->at2(brow, d);
        if (corr > best) {
          best = corr;
          best_a = arow;
          best_b = brow;
        }
      }
    }
    m.fa = best_a;
    m.fb = best_b;
    m.ax = (static_cast<double>(best_a % fa.fw) + 0.5) * fa.cell_px;
    m.ay = (static_cast<double>(best_a / fa.fw) + 0.5) * fa.cell_px;

    // 3x3 expectation around best_b against the matched A feature
    int64_t by = best_b / fb.fw, bx = best_b % fb.fw;
    bool clamp3 = false;
    int64_t oy = detail::window_origin(by, 3, fb.fh, clamp3);
    int64_t ox = detail::window_origin(bx, 3, fb.fw, clamp3);
    m.clamped = m.clamped || clamp3;
    double logits[9];
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < 9; ++k) {
      int64_t brow = (oy + k / 3) * fb.fw + ox + k % 3;
      double corr = 0;
      for (int64_t d = 0; d < dim; ++d) corr += fa.feat->at2(best_a, d) * fb.feat->at2(brow, d);
      logits[k] = corr * inv_sqrt_d;
      mx = std::max(mx, logits[k]);
    }
    double sum = 0;
    for (double& l : logits) {
      l = std::exp(l - mx);
      sum += l;
    }
    double ex = 0, ey = 0;
    for (int k = 0; k < 9; ++k) {
      double p = logits[k] / sum;
      ex += p * (static_cast<double>(ox + k % 3) + 0.5);
      ey += p * (static_cast<double>(oy + k / 3) + 0.5);
    }
    m.bx = ex * fb.cell_px;
    m.by = ey * fb.cell_px;
    out.push_back(m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ground truth and losses
// ---------------------------------------------------------------------------

// Maps a view-A pixel to view-B pixels; returns false when not covisible.
using WarpFn = std::function<bool(double ax, double ay, double& bx, double& by)>;

struct CoarseGt {
  std::vector<std::pair<int64_t, int64_t>> pairs;  // (cell_a, cell_b), one-hot
  std::vector<std::pair<double, double>> b_px;     // exact warp of the A cell center
};

// One-hot nearest-cell assignment of A coarse cell centers through the warp.
// Cells whose reprojection lands further than half a cell from the nearest
// center (Euclidean) are excluded as borderline supervision.
inline CoarseGt build_coarse_gt(const WarpFn& warp, int64_t grid_h_a, int64_t grid_w_a,
                                int64_t grid_h_b, int64_t grid_w_b, double cell_px) {
  CoarseGt gt;
  for (int64_t gy = 0; gy < grid_h_a; ++gy)
    for (int64_t gx = 0; gx < grid_w_a; ++gx) {
      double ax = (static_cast<double>(gx) + 0.5) * cell_px;
      double ay = (static_cast<double>(gy) + 0.5) * cell_px;
      double bx = 0, by = 0;
      if (!warp(ax, ay, bx, by)) continue;
      double cx = bx / cell_px - 0.5, cy = by / cell_px - 0.5;
      int64_t nx = static_cast<int64_t>(std::lround(cx));
      int64_t ny = static_cast<int64_t>(std::lround(cy));
      if (nx < 0 || nx >= grid_w_b || ny < 0 || ny >= grid_h_b) continue;
      double dx = cx - static_cast<double>(nx), dy = cy - static_cast<double>(ny);
      if (std::sqrt(dx * dx + dy * dy) >= 0.5) continue;
      gt.pairs.emplace_back(gy * grid_w_a + gx, ny * grid_w_b + nx);
      gt.b_px.emplace_back(bx, by);
    }
  return gt;
}

struct LossBreakdown {
  Var l_coarse, l_fine, l_loc, l_ponder;
  Var total;
  int64_t coarse_positives = 0;
  int64_t fine_supervised = 0;
  bool skipped = false;  // empty ground truth
};

// Training losses. P_c is the dual-softmax matching probability; the fine
// and sub-pixel terms are evaluated at the ground-truth coarse cells
// (teacher forcing). l_loc is measured in fine-cell units.
inline LossBreakdown losses(const Var& p_c, const Var& fine_a, const Var& fine_b,
                            const CoarseGt& gt, int64_t grid_w_a, int64_t grid_w_b,
                            int64_t fh_a, int64_t fw_a, int64_t fh_b, int64_t fw_b,
                            double fine_cell_px, const MatcherConfig& cfg, const Var& ponder) {
  LossBreakdown lb;
  if (gt.pairs.empty()) {
    lb.skipped = true;
    return lb;
  }
  lb.coarse_positives = static_cast<int64_t>(gt.pairs.size());
  lb.l_coarse = neg(mean_all(vlog(gather_entries(p_c, gt.pairs), 1e-30)));

  int64_t w = cfg.fine_window;
  int64_t dim_f = fine_a.cols();
  double inv_sqrt_df = 1.0 / std::sqrt(static_cast<double>(dim_f));
  std::vector<Var> fine_terms;
  std::vector<Var> loc_preds_x, loc_preds_y;
  std::vector<double> loc_gts_x, loc_gts_y;
  for (size_t k = 0; k < gt.pairs.size(); ++k) {
    auto [ca, cb] = gt.pairs[static_cast<size_t>(k)];
    auto [gbx, gby] = gt.b_px[static_cast<size_t>(k)];
    // GT fine cell in B
    double fx = gbx / fine_cell_px - 0.5, fy = gby / fine_cell_px - 0.5;
    int64_t gt_fx = static_cast<int64_t>(std::lround(fx));
    int64_t gt_fy = static_cast<int64_t>(std::lround(fy));
    if (gt_fx < 0 || gt_fx >= fw_b || gt_fy < 0 || gt_fy >= fh_b) continue;
    bool clamped = false;
    int64_t aoy = detail::window_origin(2 * (ca / grid_w_a), w, fh_a, clamped);
    int64_t aox = detail::window_origin(2 * (ca % grid_w_a), w, fw_a, clamped);
    int64_t boy = detail::window_origin(2 * (cb / grid_w_b), w, fh_b, clamped);
    int64_t box = detail::window_origin(2 * (cb % grid_w_b), w, fw_b, clamped);
    if (gt_fx < box || gt_fx >= box + w || gt_fy < boy || gt_fy >= boy + w) continue;

    std::vector<int64_t> rows_a, rows_b;
    rows_a.reserve(static_cast<size_t>(w * w));
    rows_b.reserve(static_cast<size_t>(w * w));
    for (int64_t i = 0; i < w * w; ++i) {
      rows_a.push_back((aoy + i / w) * fw_a + aox + i % w);
      rows_b.push_back((boy + i / w) * fw_b + box + i % w);
    }
    Var wa = gather_rows(fine_a, rows_a);
    Var wb = gather_rows(fine_b, rows_b);
    Var corr = matmul(wa, transpose2d(wb));  // [w^2 x w^2]
    Var p_f = dual_softmax(corr, inv_sqrt_df);
    // supervise the window-center A cell against the GT B cell
    int64_t center_a = (2 * (ca / grid_w_a) - aoy) * w + (2 * (ca % grid_w_a) - aox);
    int64_t gt_b_local = (gt_fy - boy) * w + (gt_fx - box);
    fine_terms.push_back(neg(vlog(gather_entries(p_f, {{center_a, gt_b_local}}), 1e-30)));
    ++lb.fine_supervised;

    // 3x3 expectation around the GT B cell (teacher forcing), in cell units
    bool c3 = false;
    int64_t oy = detail::window_origin(gt_fy, 3, fh_b, c3);
    int64_t ox = detail::window_origin(gt_fx, 3, fw_b, c3);
    std::vector<int64_t> rows3;
    rows3.reserve(9);
    for (int64_t i = 0; i < 9; ++i) rows3.push_back((oy + i / 3) * fw_b + ox + i % 3);
    Var a_vec = gather_rows(fine_a, {rows_a[static_cast<size_t>(center_a)]});  // [1 x D_f]
    Var logits = scale(matmul(a_vec, transpose2d(gather_rows(fine_b, rows3))), inv_sqrt_df);
    Var prob = softmax_rows(logits);  // [1 x 9]
    Tensor cx({9, 1}), cy({9, 1});
    for (int64_t i = 0; i < 9; ++i) {
      cx[i] = static_cast<double>(ox + i % 3) + 0.5;
      cy[i] = static_cast<double>(oy + i / 3) + 0.5;
    }
    loc_preds_x.push_back(matmul(prob, Var::constant(cx)));
    loc_preds_y.push_back(matmul(prob, Var::constant(cy)));
    loc_gts_x.push_back(gbx / fine_cell_px);
    loc_gts_y.push_back(gby / fine_cell_px);
  }

  if (!fine_terms.empty()) {
    lb.l_fine = mean_all(concat_rows(fine_terms));
    Tensor gx({static_cast<int64_t>(loc_gts_x.size()), 1});
    Tensor gy({static_cast<int64_t>(loc_gts_y.size()), 1});
    for (size_t i = 0; i < loc_gts_x.size(); ++i) {
      gx[static_cast<int64_t>(i)] = loc_gts_x[i];
      gy[static_cast<int64_t>(i)] = loc_gts_y[i];
    }
    Var dx = sub(concat_rows(loc_preds_x), Var::constant(gx));
    Var dy = sub(concat_rows(loc_preds_y), Var::constant(gy));
    lb.l_loc = mean_all(add(square(dx), square(dy)));
  } else {
    lb.l_fine = Var::constant(Tensor::scalar(0.0));
    lb.l_loc = Var::constant(Tensor::scalar(0.0));
  }
  lb.l_ponder = ponder.defined() ? ponder : Var::constant(Tensor::scalar(0.0));
  lb.total = add(add(lb.l_coarse, scale(lb.l_fine, cfg.alpha)),
                 add(scale(lb.l_loc, cfg.beta), scale(lb.l_ponder, cfg.gamma)));
  return lb;
}

}  // namespace evmatch
