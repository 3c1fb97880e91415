#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "evmatch/pose.hpp"
#include "evmatch/synthgen.hpp"

// Relative-pose benchmark harness: per pair, match -> pose with repeated
// RANSAC -> angular error; pooled AUC, epipolar precision, and a pixel
// precision against the dense GT warp, per evaluation-interval scale.

namespace evmatch {

struct EvalProtocol {
  std::vector<double> interval_scales{1.0};
  PoseErrorMode mode = PoseErrorMode::kMaxRt;
  RansacConfig ransac;
  int repeats = 5;
  double epipolar_thresh = 1e-4;  // squared symmetric epipolar distance
  double px_thresh = 3.0;         // GT-warp distance for pixel precision
  std::vector<double> auc_thresholds{5.0, 10.0, 20.0};
  uint64_t seed = 7;
};

// Produces matches for one manifest pair at a given interval scale.
using PairMatcher = std::function<std::vector<PixelMatch>(const ManifestEntry& entry,
                                                          const std::string& dir,
                                                          double interval_scale)>;

struct ScaleReport {
  double scale = 1.0;
  std::vector<double> auc;  // one per protocol threshold
  double precision = 0.0;     // epipolar, mean over pairs with matches
  double px_precision = 0.0;  // GT-warp 3px precision, mean over pairs
  double mean_matches = 0.0;
  int64_t pairs_evaluated = 0;
  int64_t pairs_failed = 0;
  std::vector<double> pose_errors;  // pooled over pairs and repeats
};

struct EvalReport {
  std::vector<ScaleReport> scales;
  int repeats = 5;
  std::string config_echo;

  nlohmann::json to_json() const {
    nlohmann::json js;
    js["config"] = config_echo;
    js["ransac_repeats"] = repeats;
    js["scales"] = nlohmann::json::array();
    for (const ScaleReport& s : scales) {
      nlohmann::json row{{"scale", s.scale},
                         {"precision", s.precision},
                         {"px_precision", s.px_precision},
                         {"mean_matches", s.mean_matches},
                         {"pairs", s.pairs_evaluated},
                         {"failed", s.pairs_failed}};
      row["auc"] = s.auc;
      row["pose_errors_deg"] = s.pose_errors;
      js["scales"].push_back(row);
    }
    return js;
  }
};

// Fraction of matches within px_thresh of the dense GT warp; -1 if nothing
// is comparable (no visible GT at match locations).
inline double px_precision(const std::vector<PixelMatch>& matches, const CorrespondenceGT& gt,
                           double px_thresh) {
  int64_t total = 0, good = 0;
  for (const PixelMatch& m : matches) {
    double bx = 0, by = 0;
    if (!gt.lookup(m.ax, m.ay, bx, by)) continue;
    ++total;
    double dx = m.bx - bx, dy = m.by - by;
    if (std::sqrt(dx * dx + dy * dy) <= px_thresh) ++good;
  }
  return total == 0 ? -1.0 : static_cast<double>(good) / static_cast<double>(total);
}

inline EvalReport run_benchmark(const std::vector<ManifestEntry>& entries, const std::string& dir,
                                const PairMatcher& matcher, const EvalProtocol& protocol) {
  EvalReport report;
  report.repeats = protocol.repeats;
  for (double scale : protocol.interval_scales) {
    ScaleReport sr;
    sr.scale = scale;
    double precision_sum = 0, px_sum = 0, match_sum = 0;
    int64_t precision_n = 0, px_n = 0;
    for (size_t pi = 0; pi < entries.size(); ++pi) {
      const ManifestEntry& entry = entries[pi];
      std::vector<PixelMatch> matches;
      CorrespondenceGT gt;
      try {
        gt = load_gt(dir + "/" + entry.gt_file);
        matches = matcher(entry, dir, scale);
      } catch (const Error&) {
        ++sr.pairs_failed;
        for (int rep = 0; rep < protocol.repeats; ++rep) sr.pose_errors.push_back(180.0);
        continue;
      }
      ++sr.pairs_evaluated;
      match_sum += static_cast<double>(matches.size());
      Mat3 e_gt = essential_from_pose(gt.rel);
      double prec = epipolar_precision(matches, e_gt, gt.intrinsics, protocol.epipolar_thresh);
      if (prec >= 0) {
        precision_sum += prec;
        ++precision_n;
      }
      double pxp = px_precision(matches, gt, protocol.px_thresh);
      if (pxp >= 0) {
        px_sum += pxp;
        ++px_n;
      }
      for (int rep = 0; rep < protocol.repeats; ++rep) {
        RansacConfig rc = protocol.ransac;
        rc.seed = Rng::derive(protocol.seed, pi * 131 + static_cast<uint64_t>(rep)).gen()();
        CameraPose est = estimate_pose(matches, gt.intrinsics, rc);
        sr.pose_errors.push_back(pose_error_deg(est, gt.rel, protocol.mode));
      }
    }
    for (double thr : protocol.auc_thresholds)
      sr.auc.push_back(sr.pose_errors.empty() ? 0.0 : pose_auc(sr.pose_errors, thr));
    sr.precision = precision_n ? precision_sum / static_cast<double>(precision_n) : -1.0;
    sr.px_precision = px_n ? px_sum / static_cast<double>(px_n) : -1.0;
    sr.mean_matches = sr.pairs_evaluated
                          ? match_sum / static_cast<double>(sr.pairs_evaluated)
                          : 0.0;
    report.scales.push_back(std::move(sr));
  }
  return report;
}

// GT-oracle matcher: samples the dense warp on a grid. Used to validate the
// pose pipeline end to end (and by the CLI's --oracle-gt mode).
inline std::vector<PixelMatch> oracle_matches(const CorrespondenceGT& gt, int64_t step = 4) {
  std::vector<PixelMatch> out;
  for (int64_t y = step / 2; y < gt.height; y += step)
    for (int64_t x = step / 2; x < gt.width; x += step) {
      double bx = 0, by = 0;
      if (!gt.lookup(static_cast<double>(x), static_cast<double>(y), bx, by)) continue;
      out.push_back({static_cast<double>(x), static_cast<double>(y), bx, by, 1.0});
    }
  return out;
}

}  // namespace evmatch
