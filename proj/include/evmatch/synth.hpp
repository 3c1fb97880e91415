#pragma once

#include <vector>

#include "evmatch/geometry.hpp"
#include "evmatch/rng.hpp"
#include "evmatch/tensor.hpp"

// Scene synthesis: procedural textures, sampled camera motions, and
// ray-cast rendering of one or two textured planes to log-intensity frames.

namespace evmatch {

inline constexpr double kLogIntensityFloor = -5.541263545158426;  // ln(1/255)

// Multi-octave value noise plus random shapes, intensity in [0.05, 1].
inline Tensor make_texture(Rng& rng, int64_t size) {
  Tensor tex = Tensor::full({size, size}, 0.45);
  for (int64_t cell = size / 4; cell >= 4; cell /= 2) {
    int64_t n = size / cell + 2;
    Tensor grid({n, n});
    double amp = 0.35 * std::pow(static_cast<double>(cell) / static_cast<double>(size / 4), 0.25);
    for (int64_t i = 0; i < grid.numel(); ++i) grid[i] = rng.uniform(-amp, amp);
    for (int64_t y = 0; y < size; ++y)
      for (int64_t x = 0; x < size; ++x) {
        double gx = static_cast<double>(x) / static_cast<double>(cell);
        double gy = static_cast<double>(y) / static_cast<double>(cell);
        int64_t x0 = static_cast<int64_t>(gx), y0 = static_cast<int64_t>(gy);
        double fx = gx - static_cast<double>(x0), fy = gy - static_cast<double>(y0);
        double v00 = grid.at2(y0, x0), v01 = grid.at2(y0, x0 + 1);
        double v10 = grid.at2(y0 + 1, x0), v11 = grid.at2(y0 + 1, x0 + 1);
        tex.at2(y, x) += (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
      }
  }
  int64_t shapes = rng.uniform_int(14, 24);
  for (int64_t s = 0; s < shapes; ++s) {
    double cx = rng.uniform(0, static_cast<double>(size));
    double cy = rng.uniform(0, static_cast<double>(size));
    double rx = rng.uniform(static_cast<double>(size) / 32, static_cast<double>(size) / 8);
    double ry = rng.uniform(static_cast<double>(size) / 32, static_cast<double>(size) / 8);
    double delta = rng.uniform(-0.35, 0.35);
    bool rect = rng.uniform() < 0.5;
    int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(cx - rx - 1));
    int64_t x1 = std::min<int64_t>(size - 1, static_cast<int64_t>(cx + rx + 1));
    int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(cy - ry - 1));
    int64_t y1 = std::min<int64_t>(size - 1, static_cast<int64_t>(cy + ry + 1));
    for (int64_t y = y0; y <= y1; ++y)
      for (int64_t x = x0; x <= x1; ++x) {
        double dx = (static_cast<double>(x) - cx) / rx, dy = (static_cast<double>(y) - cy) / ry;
        bool inside = rect ? (std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0) : (dx * dx + dy * dy <= 1.0);
        if (inside) tex.at2(y, x) += delta;
      }
  }
  for (int64_t i = 0; i < tex.numel(); ++i) tex[i] = std::clamp(tex[i], 0.05, 1.0);
  return tex;
}

// Bilinear texture lookup (linear intensity, clamped border).
inline double sample_texture(const Tensor& tex, double x, double y) {
  int64_t size_y = tex.dim(0), size_x = tex.dim(1);
  x = std::clamp(x, 0.0, static_cast<double>(size_x - 1));
  y = std::clamp(y, 0.0, static_cast<double>(size_y - 1));
  int64_t x0 = std::min(static_cast<int64_t>(x), size_x - 2);
  int64_t y0 = std::min(static_cast<int64_t>(y), size_y - 2);
  double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
  return (1 - fy) * ((1 - fx) * tex.at2(y0, x0) + fx * tex.at2(y0, x0 + 1)) +
         fy * ((1 - fx) * tex.at2(y0 + 1, x0) + fx * tex.at2(y0 + 1, x0 + 1));
}

// Time-parameterized rigid path: rotation interpolated on the manifold
// (rotation-vector scaling), camera center linearly. speed scales the
// traversal rate, extrapolating the same path beyond its endpoint.
struct MotionProfile {
  Vec3 rot_vec = Vec3::Zero();  // total rotation over the segment
  Vec3 trans = Vec3::Zero();    // total camera-center displacement
  double speed = 1.0;
  double duration_s = 1.0;
  Pose start = Pose::identity();  // composed in front of the path

  Pose pose_at(double t_seconds) const {
    double u = speed * t_seconds / duration_s;
    Mat3 r = rotvec_to_matrix(u * rot_vec);
    Vec3 center = u * trans;
    Pose local{r, -(r * center)};
    return local.compose(start);
  }
};

struct MotionRanges {
  double rot_deg = 8.0;     // max magnitude of the segment rotation
  double trans = 0.12;      // max per-axis center displacement (scene units)
  double speed_min = 1.0;
  double speed_max = 1.0;

  void validate() const {
    require(rot_deg >= 0 && trans >= 0 && speed_min <= speed_max && speed_min > 0,
            "MotionRanges: degenerate range");
  }
};

inline MotionProfile sample_motion(Rng& rng, const MotionRanges& ranges, double duration_s) {
  ranges.validate();
  MotionProfile m;
  Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  if (axis.norm() < 1e-9) axis = Vec3(0, 0, 1);
  axis.normalize();
  double angle = rng.uniform(-ranges.rot_deg, ranges.rot_deg) * M_PI / 180.0;
  m.rot_vec = axis * angle;
  for (int i = 0; i < 3; ++i) m.trans[i] = rng.uniform(-ranges.trans, ranges.trans);
  m.speed = rng.uniform(ranges.speed_min, ranges.speed_max);
  m.duration_s = duration_s;
  return m;
}

// One or two textured planes, world frame anchored at the initial camera.
struct Scene {
  Tensor background;          // texture of the far plane
  PlaneGeom back_plane;       // z = d2
  double back_extent = 2.0;   // world width of the textured quad

  bool has_foreground = false;
  Tensor foreground;
  PlaneGeom front_plane;      // z = d1 < d2
  Vec2 front_min = Vec2(-0.3, -0.3);
  Vec2 front_max = Vec2(0.3, 0.3);
};

inline Scene make_plane_scene(Rng& rng, int64_t tex_size, double depth = 1.5) {
  Scene s;
  s.background = make_texture(rng, tex_size);
  s.back_plane = {Vec3(0, 0, 1), depth};
  s.back_extent = 2.2 * depth;  // generous margin around the view frustum
  return s;
}

inline Scene make_two_plane_scene(Rng& rng, int64_t tex_size, double d_front = 1.0,
                                  double d_back = 1.6) {
  Scene s = make_plane_scene(rng, tex_size, d_back);
  s.has_foreground = true;
  s.foreground = make_texture(rng, tex_size / 2);
  s.front_plane = {Vec3(0, 0, 1), d_front};
  // large and near-central: both planes stay well represented in view,
  // keeping essential-matrix estimation away from planar degeneracy
  double half = 0.38 * d_front;
  double ox = rng.uniform(-0.12, 0.12) * d_front, oy = rng.uniform(-0.12, 0.12) * d_front;
  s.front_min = Vec2(ox - half, oy - half);
  s.front_max = Vec2(ox + half, oy + half);
  return s;
}

struct RayHit {
  bool valid = false;
  Vec3 point = Vec3::Zero();  // world
  bool foreground = false;
};

// Nearest textured-plane intersection of the pixel ray of `pose`.
inline RayHit cast_ray(const Scene& scene, const Pose& pose, const Intrinsics& k, double px,
                       double py) {
  Vec3 dir_cam = k.unproject(px, py);
  Vec3 dir = pose.R.transpose() * dir_cam;
  Vec3 c = pose.center();
  RayHit hit;
  if (scene.has_foreground && std::abs(dir.dot(scene.front_plane.n)) > 1e-12) {
    double s = (scene.front_plane.d - scene.front_plane.n.dot(c)) / dir.dot(scene.front_plane.n);
    if (s > 1e-9) {
      Vec3 p = c + s * dir;
      if (p.x() >= scene.front_min.x() && p.x() <= scene.front_max.x() &&
          p.y() >= scene.front_min.y() && p.y() <= scene.front_max.y()) {
        hit.valid = true;
        hit.foreground = true;
        hit.point = p;
        return hit;
      }
    }
  }
  if (std::abs(dir.dot(scene.back_plane.n)) > 1e-12) {
    double s = (scene.back_plane.d - scene.back_plane.n.dot(c)) / dir.dot(scene.back_plane.n);
    if (s > 1e-9) {
      hit.valid = true;
      hit.point = c + s * dir;
    }
  }
  return hit;
}

inline double scene_intensity(const Scene& scene, const RayHit& hit) {
  if (!hit.valid) return 0.05;
  if (hit.foreground) {
    double u = (hit.point.x() - scene.front_min.x()) / (scene.front_max.x() - scene.front_min.x());
    double v = (hit.point.y() - scene.front_min.y()) / (scene.front_max.y() - scene.front_min.y());
    return sample_texture(scene.foreground, u * static_cast<double>(scene.foreground.dim(1) - 1),
                          v * static_cast<double>(scene.foreground.dim(0) - 1));
  }
  double half = scene.back_extent * 0.5;
  double u = (hit.point.x() + half) / scene.back_extent;
  double v = (hit.point.y() + half) / scene.back_extent;
  return sample_texture(scene.background, u * static_cast<double>(scene.background.dim(1) - 1),
                        v * static_cast<double>(scene.background.dim(0) - 1));
}

// One log-intensity frame [H x W] at the given pose.
inline Tensor render_frame(const Scene& scene, const Pose& pose, const Intrinsics& k, int64_t width,
                           int64_t height) {
  Tensor frame({height, width});
  for (int64_t y = 0; y < height; ++y)
    for (int64_t x = 0; x < width; ++x) {
      RayHit hit = cast_ray(scene, pose, k, static_cast<double>(x), static_cast<double>(y));
      double lin = scene_intensity(scene, hit);
      frame.at2(y, x) = std::max(kLogIntensityFloor, std::log(lin));
    }
  return frame;
}

// Frames at fps over [0, motion.duration_s], inclusive of both endpoints.
inline std::vector<Tensor> render_sequence(const Scene& scene, const MotionProfile& motion,
                                           const Intrinsics& k, int64_t width, int64_t height,
                                           double fps) {
  require(fps > 0, "render_sequence: fps must be > 0");
  int64_t n = static_cast<int64_t>(std::llround(motion.duration_s * fps)) + 1;
  std::vector<Tensor> frames;
  frames.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    frames.push_back(
        render_frame(scene, motion.pose_at(static_cast<double>(i) / fps), k, width, height));
  return frames;
}

}  // namespace evmatch
