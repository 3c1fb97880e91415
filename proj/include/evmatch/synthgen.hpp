#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "evmatch/esim.hpp"
#include "evmatch/evt1.hpp"
#include "evmatch/pgm.hpp"
#include "evmatch/synth.hpp"

// Desk-scale synthetic dataset: textured plane (or two-plane) scenes under
// sampled motions, rendered to high-rate frames, converted to events, with
// dense ground-truth correspondences and relative poses.

namespace evmatch {

// Dense pixel warp A -> B with visibility, plus the relative pose.
struct CorrespondenceGT {
  int64_t width = 0, height = 0;
  std::vector<double> warp_x, warp_y;  // per A pixel, view-B pixel coords
  std::vector<uint8_t> visible;
  Pose rel;  // B from A
  Intrinsics intrinsics;
  bool planar = false;
  Mat3 homography = Mat3::Zero();  // valid when planar

  bool lookup(double ax, double ay, double& bx, double& by) const {
    int64_t xi = static_cast<int64_t>(std::lround(ax));
    int64_t yi = static_cast<int64_t>(std::lround(ay));
    if (xi < 0 || xi >= width || yi < 0 || yi >= height) return false;
    size_t idx = static_cast<size_t>(yi * width + xi);
    if (!visible[idx]) return false;
    bx = warp_x[idx];
    by = warp_y[idx];
    return true;
  }
};

// Per-pixel ray cast through poseA's view, reprojected into poseB with an
// occlusion and field-of-view check. For single-plane scenes the warp is
// also available in closed form as the induced homography.
inline CorrespondenceGT gt_correspondences(const Scene& scene, const Pose& pose_a,
                                           const Pose& pose_b, const Intrinsics& k, int64_t width,
                                           int64_t height) {
  require(scene.back_plane.d - scene.back_plane.n.dot(pose_a.center()) > 0 &&
              scene.back_plane.d - scene.back_plane.n.dot(pose_b.center()) > 0,
          "gt_correspondences: plane behind a camera");
  CorrespondenceGT gt;
  gt.width = width;
  gt.height = height;
  gt.warp_x.assign(static_cast<size_t>(width * height), 0.0);
  gt.warp_y.assign(static_cast<size_t>(width * height), 0.0);
  gt.visible.assign(static_cast<size_t>(width * height), 0);
  gt.rel = relative_pose(pose_a, pose_b);
  gt.intrinsics = k;
  gt.planar = !scene.has_foreground;
  if (gt.planar) gt.homography = induced_homography(pose_a, pose_b, scene.back_plane, k);

  for (int64_t y = 0; y < height; ++y)
    for (int64_t x = 0; x < width; ++x) {
      RayHit hit = cast_ray(scene, pose_a, k, static_cast<double>(x), static_cast<double>(y));
      if (!hit.valid) continue;
      Vec3 xb = pose_b.apply(hit.point);
      if (xb.z() <= 1e-9) continue;
      Vec2 pb = k.project(xb);
      if (pb.x() < 0 || pb.x() > static_cast<double>(width - 1) || pb.y() < 0 ||
          pb.y() > static_cast<double>(height - 1))
        continue;
      // occlusion: B must see the same surface point
      RayHit hb = cast_ray(scene, pose_b, k, pb.x(), pb.y());
      if (!hb.valid || (hb.point - hit.point).norm() > 1e-6) continue;
      size_t idx = static_cast<size_t>(y * width + x);
      gt.warp_x[idx] = pb.x();
      gt.warp_y[idx] = pb.y();
      gt.visible[idx] = 1;
    }
  return gt;
}

enum class ViewModality { kEvents, kImage };

struct PairConfig {
  int64_t width = 96, height = 96;
  double focal = 110.0;
  int64_t texture_size = 256;
  double duration_s = 0.32;
  double fps = 500.0;
  MotionRanges motion;             // per-segment motion
  double baseline_rot_deg = 10.0;  // wide-baseline offset between the views
  double baseline_trans = 0.18;
  double c_min = 0.16, c_max = 0.34;
  double noise_rate_hz = 0.0;
  int64_t refractory_ns = 0;
  double two_plane_fraction = 0.5;      // mix of scene types
  double image_view_fraction = 0.0;     // mix of event-to-image pairs
  bool force_two_plane = false;

  Intrinsics intrinsics() const {
    return {focal, focal, static_cast<double>(width - 1) / 2.0,
            static_cast<double>(height - 1) / 2.0};
  }
};

struct SynthPair {
  EventStream events_a;
  EventStream events_b;    // empty when view B is an image
  Tensor image_b;          // log intensity, set when view B is an image
  ViewModality modality_b = ViewModality::kEvents;
  CorrespondenceGT gt;
  bool two_plane = false;
  double contrast = 0.0;
  uint64_t seed = 0;
};

// Deterministic per (config, seed): two motion segments over one scene,
// reference time at each segment's end, GT between the reference poses.
inline SynthPair generate_pair(const PairConfig& cfg, uint64_t seed) {
  SynthPair pair;
  pair.seed = seed;
  Rng rng = Rng::derive(seed, 0x5eed);
  Intrinsics k = cfg.intrinsics();

  pair.two_plane = cfg.force_two_plane || rng.uniform() < cfg.two_plane_fraction;
  Scene scene = pair.two_plane ? make_two_plane_scene(rng, cfg.texture_size)
                               : make_plane_scene(rng, cfg.texture_size);
  pair.contrast = cfg.c_min + (cfg.c_max - cfg.c_min) * rng.uniform();
  SensorModel sensor;
  sensor.c_pos = sensor.c_neg = pair.contrast;
  sensor.noise_rate_hz = cfg.noise_rate_hz;
  sensor.refractory_ns = cfg.refractory_ns;

  MotionProfile motion_a = sample_motion(rng, cfg.motion, cfg.duration_s);

  // wide-baseline start for view B
  Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  if (axis.norm() < 1e-9) axis = Vec3(0, 1, 0);
  axis.normalize();
  double angle = rng.uniform(-cfg.baseline_rot_deg, cfg.baseline_rot_deg) * M_PI / 180.0;
  Vec3 base_center(rng.uniform(-cfg.baseline_trans, cfg.baseline_trans),
                   rng.uniform(-cfg.baseline_trans, cfg.baseline_trans),
                   rng.uniform(-0.4, 0.4) * cfg.baseline_trans);
  Mat3 base_r = rotvec_to_matrix(axis * angle);
  MotionProfile motion_b = sample_motion(rng, cfg.motion, cfg.duration_s);
  motion_b.start = Pose{base_r, -(base_r * base_center)};

  pair.modality_b = rng.uniform() < cfg.image_view_fraction ? ViewModality::kImage
                                                            : ViewModality::kEvents;

  auto frames_a = render_sequence(scene, motion_a, k, cfg.width, cfg.height, cfg.fps);
  pair.events_a = frames_to_events(frames_a, sensor, cfg.fps, rng);

  Pose ref_a = motion_a.pose_at(cfg.duration_s);
  Pose ref_b = motion_b.pose_at(cfg.duration_s);
  if (pair.modality_b == ViewModality::kEvents) {
    auto frames_b = render_sequence(scene, motion_b, k, cfg.width, cfg.height, cfg.fps);
    pair.events_b = frames_to_events(frames_b, sensor, cfg.fps, rng);
  } else {
    pair.image_b = render_frame(scene, ref_b, k, cfg.width, cfg.height);
  }
  pair.gt = gt_correspondences(scene, ref_a, ref_b, k, cfg.width, cfg.height);
  return pair;
}

// ---------------------------------------------------------------------------
// On-disk dataset with a JSON-lines manifest
// ---------------------------------------------------------------------------

struct ManifestEntry {
  uint64_t seed = 0;
  std::string events_a, events_b, image_b, gt_file;
  std::string modality_b;
  bool two_plane = false;
  double contrast = 0.0;
  Quaternion rel_q;
  Vec3 rel_t;
  Intrinsics intrinsics;
};

inline void save_gt(const CorrespondenceGT& gt, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "save_gt: cannot open " + path);
  f.write("EVGT", 4);
  auto w64 = [&](int64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); };
  auto wd = [&](double v) { f.write(reinterpret_cast<const char*>(&v), 8); };
  w64(gt.width);
  w64(gt.height);
  wd(gt.intrinsics.fx);
  wd(gt.intrinsics.fy);
  wd(gt.intrinsics.cx);
  wd(gt.intrinsics.cy);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) wd(gt.rel.R(i, j));
  for (int i = 0; i < 3; ++i) wd(gt.rel.t[i]);
  w64(gt.planar ? 1 : 0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) wd(gt.homography(i, j));
  f.write(reinterpret_cast<const char*>(gt.warp_x.data()),
          static_cast<std::streamsize>(gt.warp_x.size() * 8));
  f.write(reinterpret_cast<const char*>(gt.warp_y.data()),
          static_cast<std::streamsize>(gt.warp_y.size() * 8));
  f.write(reinterpret_cast<const char*>(gt.visible.data()),
          static_cast<std::streamsize>(gt.visible.size()));
  require(f.good(), "save_gt: write failed " + path);
}

inline CorrespondenceGT load_gt(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "load_gt: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  require(f.good() && std::memcmp(magic, "EVGT", 4) == 0, "load_gt: bad magic " + path);
  auto r64 = [&]() {
    int64_t v;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  auto rd = [&]() {
    double v;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  CorrespondenceGT gt;
  gt.width = r64();
  gt.height = r64();
  gt.intrinsics.fx = rd();
  gt.intrinsics.fy = rd();
  gt.intrinsics.cx = rd();
  gt.intrinsics.cy = rd();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) gt.rel.R(i, j) = rd();
  for (int i = 0; i < 3; ++i) gt.rel.t[i] = rd();
  gt.planar = r64() != 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) gt.homography(i, j) = rd();
  size_t n = static_cast<size_t>(gt.width * gt.height);
  gt.warp_x.resize(n);
  gt.warp_y.resize(n);
  gt.visible.resize(n);
  f.read(reinterpret_cast<char*>(gt.warp_x.data()), static_cast<std::streamsize>(n * 8));
  f.read(reinterpret_cast<char*>(gt.warp_y.data()), static_cast<std::streamsize>(n * 8));
  f.read(reinterpret_cast<char*>(gt.visible.data()), static_cast<std::streamsize>(n));
  require(f.good(), "load_gt: truncated " + path);
  return gt;
}

inline nlohmann::json manifest_entry_to_json(const ManifestEntry& e) {
  return nlohmann::json{{"seed", e.seed},
                        {"events_a", e.events_a},
                        {"events_b", e.events_b},
                        {"image_b", e.image_b},
                        {"gt", e.gt_file},
                        {"modality_b", e.modality_b},
                        {"two_plane", e.two_plane},
                        {"contrast", e.contrast},
                        {"rel_q", {e.rel_q.w, e.rel_q.x, e.rel_q.y, e.rel_q.z}},
                        {"rel_t", {e.rel_t.x(), e.rel_t.y(), e.rel_t.z()}},
                        {"fx", e.intrinsics.fx},
                        {"fy", e.intrinsics.fy},
                        {"cx", e.intrinsics.cx},
                        {"cy", e.intrinsics.cy}};
}

inline ManifestEntry manifest_entry_from_json(const nlohmann::json& j) {
  ManifestEntry e;
  e.seed = j.at("seed").get<uint64_t>();
  e.events_a = j.at("events_a").get<std::string>();
  e.events_b = j.at("events_b").get<std::string>();
  e.image_b = j.at("image_b").get<std::string>();
  e.gt_file = j.at("gt").get<std::string>();
  e.modality_b = j.at("modality_b").get<std::string>();
  e.two_plane = j.at("two_plane").get<bool>();
  e.contrast = j.at("contrast").get<double>();
  auto q = j.at("rel_q");
  e.rel_q = {q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>()};
  auto t = j.at("rel_t");
  e.rel_t = Vec3(t[0].get<double>(), t[1].get<double>(), t[2].get<double>());
  e.intrinsics = {j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                  j.at("cy").get<double>()};
  return e;
}

struct Manifest {
  std::string config_echo;
  std::vector<ManifestEntry> entries;
};

// JSON-lines manifest; the first line is a header record carrying the
// resolved config for provenance.
inline void write_manifest(const Manifest& m, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), "write_manifest: cannot open " + path);
  f << nlohmann::json{{"type", "header"}, {"config", m.config_echo}}.dump() << "\n";
  for (const ManifestEntry& e : m.entries) f << manifest_entry_to_json(e).dump() << "\n";
  require(f.good(), "write_manifest: write failed " + path);
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "read_manifest: cannot open " + path);
  Manifest m;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail("read_manifest: bad JSON at " + path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (j.contains("type") && j["type"] == "header") {
      m.config_echo = j.value("config", "");
      continue;
    }
    m.entries.push_back(manifest_entry_from_json(j));
  }
  return m;
}

// Writes one pair to disk and returns its manifest entry.
inline ManifestEntry write_pair(const SynthPair& pair, const std::string& dir, uint64_t index) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::string stem = "pair_" + std::to_string(index);
  ManifestEntry e;
  e.seed = pair.seed;
  e.two_plane = pair.two_plane;
  e.contrast = pair.contrast;
  e.rel_q = matrix_to_quaternion(pair.gt.rel.R);
  e.rel_t = pair.gt.rel.t;
  e.intrinsics = pair.gt.intrinsics;
  e.events_a = stem + "_a.evt1";
  write_events(pair.events_a, dir + "/" + e.events_a);
  if (pair.modality_b == ViewModality::kEvents) {
    e.modality_b = "events";
    e.events_b = stem + "_b.evt1";
    write_events(pair.events_b, dir + "/" + e.events_b);
  } else {
    e.modality_b = "image";
    e.image_b = stem + "_b.pgm";
    // stored as linear 8-bit grayscale
    Tensor lin(pair.image_b.shape());
    for (int64_t i = 0; i < lin.numel(); ++i) lin[i] = std::exp(pair.image_b[i]);
    write_pnm(to_u8(lin), dir + "/" + e.image_b);
  }
  e.gt_file = stem + "_gt.bin";
  save_gt(pair.gt, dir + "/" + e.gt_file);
  return e;
}

}  // namespace evmatch
