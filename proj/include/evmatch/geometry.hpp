#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "evmatch/tensor.hpp"

namespace evmatch {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;

  Mat3 matrix() const {
    Mat3 k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }
  Vec3 unproject(double x, double y) const { return {(x - cx) / fx, (y - cy) / fy, 1.0}; }
  Vec2 project(const Vec3& xc) const {
    return {fx * xc.x() / xc.z() + cx, fy * xc.y() / xc.z() + cy};
  }
  Vec2 normalize(double x, double y) const { return {(x - cx) / fx, (y - cy) / fy}; }
};

// Camera-from-world rigid transform: x_cam = R * X + t.
struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  static Pose identity() { return {}; }
  Vec3 apply(const Vec3& x) const { return R * x + t; }
  Vec3 center() const { return -R.transpose() * t; }
  Pose inverse() const { return {R.transpose(), -(R.transpose() * t)}; }
  // this ∘ other: first other, then this.
  Pose compose(const Pose& other) const { return {R * other.R, R * other.t + t}; }
};

// Relative pose mapping camera-A coordinates to camera-B coordinates.
inline Pose relative_pose(const Pose& a, const Pose& b) {
  return {b.R * a.R.transpose(), b.t - b.R * a.R.transpose() * a.t};
}

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

// Rodrigues exponential: rotation vector (axis * angle) -> matrix.
inline Mat3 rotvec_to_matrix(const Vec3& r) {
  double angle = r.norm();
  if (angle < 1e-14) return Mat3::Identity();
  Vec3 axis = r / angle;
  Mat3 k = skew(axis);
  return Mat3::Identity() + std::sin(angle) * k + (1.0 - std::cos(angle)) * k * k;
}

inline double rotation_angle_deg(const Mat3& r) {
  double c = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

struct Quaternion {
  double w = 1, x = 0, y = 0, z = 0;
};

inline Quaternion matrix_to_quaternion(const Mat3& m) {
  Eigen::Quaterniond q(m);
  q.normalize();
  return {q.w(), q.x(), q.y(), q.z()};
}

inline Mat3 quaternion_to_matrix(const Quaternion& q) {
  return Eigen::Quaterniond(q.w, q.x, q.y, q.z).normalized().toRotationMatrix();
}

// Textured plane n^T X = d (world frame), n unit.
struct PlaneGeom {
  Vec3 n = Vec3(0, 0, 1);
  double d = 1.0;
};

// Homography (pixels, A -> B) induced by a world plane expressed in frame A:
// for plane n_a^T X_a = d_a, H = K (R + t n_a^T / d_a) K^-1 with (R, t) the
// relative pose A -> B.
inline Mat3 induced_homography(const Pose& pose_a, const Pose& pose_b, const PlaneGeom& world_plane,
                               const Intrinsics& k) {
  Pose rel = relative_pose(pose_a, pose_b);
  // plane into frame A: n_a = R_a n, d_a = d - n^T C_a
  Vec3 n_a = pose_a.R * world_plane.n;
  double d_a = world_plane.d - world_plane.n.dot(pose_a.center());
  require(std::abs(d_a) > 1e-12, "induced_homography: camera lies on the plane");
  Mat3 kmat = k.matrix();
  return kmat * (rel.R + rel.t * n_a.transpose() / d_a) * kmat.inverse();
}

inline Vec2 apply_homography(const Mat3& h, const Vec2& p) {
  Vec3 q = h * Vec3(p.x(), p.y(), 1.0);
  require(std::abs(q.z()) > 1e-15, "apply_homography: point at infinity");
  return {q.x() / q.z(), q.y() / q.z()};
}

// Essential matrix from a relative pose (B from A): E = [t]_x R, t normalized.
inline Mat3 essential_from_pose(const Pose& rel) {
  Vec3 t = rel.t;
  double n = t.norm();
  if (n > 1e-15) t /= n;
  return skew(t) * rel.R;
}

}  // namespace evmatch
