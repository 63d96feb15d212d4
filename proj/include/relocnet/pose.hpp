#pragma once

#include <cmath>

#include "relocnet/geom.hpp"

namespace relocnet {

/// Absolute camera pose.
///
/// Convention: `rotation` is world-from-camera and `center` is the camera
/// center in world coordinates (meters). A 4x4 pose matrix [R | c; 0 0 0 1]
/// therefore maps camera coordinates to world coordinates, as in 7-Scenes.
struct Pose {
  Quat rotation;
  Vec3 center = Vec3::Zero();

  friend bool operator==(const Pose& a, const Pose& b) {
    return a.rotation == b.rotation && a.center == b.center;
  }
};

/// Sign-minimized quaternion L2 distance min(|a - b|, |a + b|).
inline double quat_l2_distance(const Quat& a, const Quat& b) {
  const Eigen::Vector4d ca = a.coeffs();
  const Eigen::Vector4d cb = b.coeffs();
  return std::min((ca - cb).norm(), (ca + cb).norm());
}

/// Translation distance plus beta times quaternion L2 distance.
inline double pose_metric(const Pose& a, const Pose& b, double beta = 1.0) {
  return (a.center - b.center).norm() + beta * quat_l2_distance(a.rotation, b.rotation);
}

/// Left-applies the rigid transform (g_rot, g_t) to a pose.
inline Pose transform_pose(const Quat& g_rot, const Vec3& g_t, const Pose& p) {
  return Pose{quat_mul(g_rot, p.rotation), quat_rotate(g_rot, p.center) + g_t};
}

inline Eigen::Matrix4d pose_to_matrix(const Pose& p) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = quat_to_matrix(p.rotation);
  m.topRightCorner<3, 1>() = p.center;
  return m;
}

}  // namespace relocnet
