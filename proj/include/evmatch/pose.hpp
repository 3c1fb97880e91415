#pragma once

#include <vector>

#include "evmatch/geometry.hpp"
#include "evmatch/matchfile.hpp"
#include "evmatch/rng.hpp"

// Relative-pose estimation from matches: normalized 8-point essential
// matrix inside RANSAC, least-squares refinement on the inliers, and
// cheirality-checked decomposition.

namespace evmatch {

struct CameraPose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3(0, 0, 1);  // unit direction
  bool valid = false;
};

struct NormalizedMatch {
  Vec2 a, b;
};

inline std::vector<NormalizedMatch> normalize_matches(const std::vector<PixelMatch>& matches,
                                                      const Intrinsics& k) {
  std::vector<NormalizedMatch> out;
  out.reserve(matches.size());
  for (const PixelMatch& m : matches)
    out.push_back({k.normalize(m.ax, m.ay), k.normalize(m.bx, m.by)});
  return out;
}

// Least-squares essential matrix from >= 8 correspondences (indices into
// `matches`), with isotropic conditioning and the (s, s, 0) projection.
inline Mat3 eight_point_essential(const std::vector<NormalizedMatch>& matches,
                                  const std::vector<int>& idx) {
  require(idx.size() >= 8, "eight_point: needs >= 8 matches");
  Vec2 mean_a = Vec2::Zero(), mean_b = Vec2::Zero();
  for (int i : idx) {
    mean_a += matches[static_cast<size_t>(i)].a;
    mean_b += matches[static_cast<size_t>(i)].b;
  }
  mean_a /= static_cast<double>(idx.size());
  mean_b /= static_cast<double>(idx.size());
  double scale_a = 0, scale_b = 0;
  for (int i : idx) {
    scale_a += (matches[static_cast<size_t>(i)].a - mean_a).norm();
    scale_b += (matches[static_cast<size_t>(i)].b - mean_b).norm();
  }
  scale_a = std::sqrt(2.0) * static_cast<double>(idx.size()) / std::max(scale_a, 1e-12);
  scale_b = std::sqrt(2.0) * static_cast<double>(idx.size()) / std::max(scale_b, 1e-12);
  Mat3 ta, tb;
  ta << scale_a, 0, -scale_a * mean_a.x(), 0, scale_a, -scale_a * mean_a.y(), 0, 0, 1;
  tb << scale_b, 0, -scale_b * mean_b.x(), 0, scale_b, -scale_b * mean_b.y(), 0, 0, 1;

  Eigen::MatrixXd a(static_cast<int64_t>(idx.size()), 9);
  for (size_t r = 0; r < idx.size(); ++r) {
    const NormalizedMatch& m = matches[static_cast<size_t>(idx[r])];
    Vec3 pa = ta * Vec3(m.a.x(), m.a.y(), 1.0);
    Vec3 pb = tb * Vec3(m.b.x(), m.b.y(), 1.0);
    int64_t row = static_cast<int64_t>(r);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) a(row, i * 3 + j) = pb[i] * pa[j];
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  Eigen::VectorXd e = svd.matrixV().col(8);
  Mat3 em;
  em << e(0), e(1), e(2), e(3), e(4), e(5), e(6), e(7), e(8);
  em = tb.transpose() * em * ta;  // undo conditioning
  Eigen::JacobiSVD<Mat3> esvd(em, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 s = esvd.singularValues();
  double sv = 0.5 * (s(0) + s(1));
  return esvd.matrixU() * Eigen::DiagonalMatrix<double, 3>(sv, sv, 0.0) *
         esvd.matrixV().transpose();
}

// Squared symmetric epipolar distance in normalized coordinates.
inline double sym_epipolar_sq(const Mat3& e, const Vec2& a, const Vec2& b) {
  Vec3 xa(a.x(), a.y(), 1.0), xb(b.x(), b.y(), 1.0);
  Vec3 ea = e * xa;
  Vec3 etb = e.transpose() * xb;
  double num = xb.dot(ea);
  num *= num;
  double da = ea.x() * ea.x() + ea.y() * ea.y();
  double db = etb.x() * etb.x() + etb.y() * etb.y();
  if (da < 1e-18 || db < 1e-18) return std::numeric_limits<double>::infinity();
  return num * (1.0 / da + 1.0 / db);
}

struct RansacConfig {
  int iters = 1000;
  double thresh = 1e-3;  // on sqrt(sym_epipolar_sq), normalized units
  uint64_t seed = 0;
};

struct RansacResult {
  Mat3 e = Mat3::Zero();
  std::vector<char> inlier_mask;
  int inlier_count = 0;
  bool valid = false;
};

inline RansacResult ransac_essential(const std::vector<NormalizedMatch>& matches,
                                     const RansacConfig& cfg) {
  RansacResult best;
  int n = static_cast<int>(matches.size());
  if (n < 8) return best;
  Rng rng(cfg.seed);
  double thresh_sq = cfg.thresh * cfg.thresh;
  std::vector<int> all(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
  int needed_iters = cfg.iters;
  for (int it = 0; it < needed_iters; ++it) {
    std::vector<int> sample;
    while (sample.size() < 8) {
      int c = static_cast<int>(rng.uniform_int(0, n - 1));
      bool dup = false;
      for (int s : sample) dup = dup || s == c;
      if (!dup) sample.push_back(c);
    }
    Mat3 e;
    try {
      e = eight_point_essential(matches, sample);
    } catch (const Error&) {
      continue;
    }
    std::vector<char> mask(static_cast<size_t>(n), 0);
    int count = 0;
    for (int i = 0; i < n; ++i)
      if (sym_epipolar_sq(e, matches[static_cast<size_t>(i)].a, matches[static_cast<size_t>(i)].b) <
          thresh_sq) {
        mask[static_cast<size_t>(i)] = 1;
        ++count;
      }
    if (count > best.inlier_count) {
      best.e = e;
      best.inlier_mask = mask;
      best.inlier_count = count;
      best.valid = count >= 8;
      // adaptive early exit (99.9% confidence)
      double w = static_cast<double>(count) / static_cast<double>(n);
      double p_all = std::pow(w, 8.0);
      if (p_all > 1e-12) {
        double adaptive =
            std::ceil(std::log(1e-3) / std::log(std::max(1e-12, 1.0 - p_all)));
        if (adaptive < static_cast<double>(needed_iters))
          needed_iters = std::max(it + 1, static_cast<int>(adaptive));
      }
    }
  }
  // refine on inliers, twice
  for (int round = 0; round < 2 && best.valid; ++round) {
    std::vector<int> inl;
    for (int i = 0; i < n; ++i)
      if (best.inlier_mask[static_cast<size_t>(i)]) inl.push_back(i);
    if (inl.size() < 8) break;
    Mat3 e = eight_point_essential(matches, inl);
    std::vector<char> mask(static_cast<size_t>(n), 0);
    int count = 0;
    for (int i = 0; i < n; ++i)
      if (sym_epipolar_sq(e, matches[static_cast<size_t>(i)].a, matches[static_cast<size_t>(i)].b) <
          thresh_sq) {
        mask[static_cast<size_t>(i)] = 1;
        ++count;
      }
    if (count >= best.inlier_count) {
      best.e = e;
      best.inlier_mask = mask;
      best.inlier_count = count;
    }
  }
  return best;
}

// Linear triangulation under P_A = [I|0], P_B = [R|t].
inline Vec3 triangulate(const Mat3& r, const Vec3& t, const Vec2& a, const Vec2& b) {
  Eigen::Matrix4d m;
  Eigen::Matrix<double, 3, 4> pa, pb;
  pa.setZero();
  pa.block<3, 3>(0, 0) = Mat3::Identity();
  pb.block<3, 3>(0, 0) = r;
  pb.col(3) = t;
  m.row(0) = a.x() * pa.row(2) - pa.row(0);
  m.row(1) = a.y() * pa.row(2) - pa.row(1);
  m.row(2) = b.x() * pb.row(2) - pb.row(0);
  m.row(3) = b.y() * pb.row(2) - pb.row(1);
  Eigen::JacobiSVD<Eigen::Matrix4d> svd(m, Eigen::ComputeFullV);
  Eigen::Vector4d x = svd.matrixV().col(3);
  if (std::abs(x(3)) < 1e-15) return Vec3(0, 0, -1);
  return x.head<3>() / x(3);
}

// E -> (R, t) with the cheirality check over the inlier matches.
inline CameraPose decompose_essential(const Mat3& e, const std::vector<NormalizedMatch>& matches,
                                      const std::vector<char>& inlier_mask) {
  Eigen::JacobiSVD<Mat3> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU(), v = svd.matrixV();
  if (u.determinant() < 0) u.col(2) *= -1;
  if (v.determinant() < 0) v.col(2) *= -1;
  Mat3 w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  Mat3 r1 = u * w * v.transpose();
  Mat3 r2 = u * w.transpose() * v.transpose();
  Vec3 t = u.col(2);
  CameraPose best;
  int best_front = -1;
  for (const Mat3& r : {r1, r2})
    for (const Vec3& tt : {Vec3(t), Vec3(-t)}) {
      int front = 0;
      for (size_t i = 0; i < matches.size(); ++i) {
        if (!inlier_mask.empty() && !inlier_mask[i]) continue;
        Vec3 x = triangulate(r, tt, matches[i].a, matches[i].b);
        if (x.z() > 0 && (r * x + tt).z() > 0) ++front;
      }
      if (front > best_front) {
        best_front = front;
        best.R = r;
        best.t = tt;
        best.valid = true;
      }
    }
  return best;
}

struct PoseEstimateConfig {
  RansacConfig ransac;
  int repeats = 5;  // independent RANSAC repeats, all errors pooled
};

// One full estimate: RANSAC + refinement + decomposition.
inline CameraPose estimate_pose(const std::vector<PixelMatch>& matches, const Intrinsics& k,
                                const RansacConfig& cfg, std::vector<char>* inlier_mask = nullptr) {
  CameraPose pose;
  if (matches.size() < 8) return pose;  // invalid, counted as 180 deg
  auto norm = normalize_matches(matches, k);
  RansacResult r = ransac_essential(norm, cfg);
  if (!r.valid) return pose;
  if (inlier_mask) *inlier_mask = r.inlier_mask;
  return decompose_essential(r.e, norm, r.inlier_mask);
}

enum class PoseErrorMode { kMaxRt, kRotationOnly };

// Angular pose error in degrees. Invalid estimates score 180. For max_rt,
// a (near-)zero GT translation leaves the translation term out (undefined
// direction). Translation ambiguity is resolved with min(theta, 180-theta).
inline double pose_error_deg(const CameraPose& est, const Pose& gt, PoseErrorMode mode) {
  if (!est.valid) return 180.0;
  double rot_err = rotation_angle_deg(est.R * gt.R.transpose());
  if (mode == PoseErrorMode::kRotationOnly) return rot_err;
  double tnorm = gt.t.norm();
  if (tnorm < 1e-9) return rot_err;
  double c = std::clamp(est.t.normalized().dot(gt.t / tnorm), -1.0, 1.0);
  double t_err = std::acos(c) * 180.0 / M_PI;
  t_err = std::min(t_err, 180.0 - t_err);
  return std::max(rot_err, t_err);
}

// Pose AUC at a threshold: area under cumulative recall vs error over
// [0, thr], normalized by thr; trapezoidal over the sorted errors.
inline double pose_auc(std::vector<double> errors, double thr) {
  require(!errors.empty(), "pose_auc: empty error list");
  std::sort(errors.begin(), errors.end());
  std::vector<double> xs{0.0};
  std::vector<double> ys{0.0};
  double n = static_cast<double>(errors.size());
  for (size_t i = 0; i < errors.size(); ++i) {
    if (errors[i] >= thr) break;
    xs.push_back(errors[i]);
    ys.push_back(static_cast<double>(i + 1) / n);
  }
  xs.push_back(thr);
  ys.push_back(ys.back());
  double area = 0;
  for (size_t i = 1; i < xs.size(); ++i)
    area += 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
  return area / thr;
}

// Fraction of matches whose squared symmetric epipolar distance against the
// GT essential matrix falls below the threshold. Empty input is flagged by
// the caller (returns -1 here).
inline double epipolar_precision(const std::vector<PixelMatch>& matches, const Mat3& e_gt,
                                 const Intrinsics& k, double thresh) {
  if (matches.empty()) return -1.0;
  auto norm = normalize_matches(matches, k);
  int64_t correct = 0;
  for (const NormalizedMatch& m : norm)
    if (sym_epipolar_sq(e_gt, m.a, m.b) < thresh) ++correct;
  return static_cast<double>(correct) / static_cast<double>(matches.size());
}

}  // namespace evmatch
