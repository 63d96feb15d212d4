#pragma once

// Quaternion, rotation and ray primitives.
//
// Quaternions are stored (w, x, y, z) and always unit-norm with canonical
// sign: w > 0, or w == 0 and the first nonzero of (x, y, z) positive.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>

#include "relocnet/error.hpp"

namespace relocnet {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kDegPerRad = 180.0 / std::numbers::pi;
inline constexpr double kRadPerDeg = std::numbers::pi / 180.0;

inline double deg2rad(double deg) { return deg * kRadPerDeg; }
inline double rad2deg(double rad) { return rad * kDegPerRad; }

class Quat {
 public:
  /// Identity rotation.
  constexpr Quat() = default;

  /// Normalizes and canonicalizes. Throws ZeroVector for a (near) zero input.
  static Quat normalized(double w, double x, double y, double z) {
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    if (!(n >= 1e-12) || !std::isfinite(n)) {
      throw Error(ErrorCode::ZeroVector, "quaternion norm is zero or non-finite");
    }
    Quat q;
    q.w_ = w / n;
    q.x_ = x / n;
    q.y_ = y / n;
    q.z_ = z / n;
    q.canonicalize();
    return q;
  }

  /// Rotation by `angle_rad` about `axis` (need not be unit).
  static Quat from_axis_angle(const Vec3& axis, double angle_rad) {
    const double n = axis.norm();
    if (n < 1e-15) {
      throw Error(ErrorCode::ZeroVector, "rotation axis is zero");
    }
    const Vec3 u = axis / n;
    const double s = std::sin(0.5 * angle_rad);
    return normalized(std::cos(0.5 * angle_rad), s * u.x(), s * u.y(), s * u.z());
  }

  /// Exponential map of a rotation vector (axis * angle, radians).
  static Quat exp(const Vec3& rotvec) {
    const double theta = rotvec.norm();
    // sin(theta/2)/theta, with its series near zero.
    const double k = theta < 1e-6 ? 0.5 - theta * theta / 48.0 : std::sin(0.5 * theta) / theta;
    return normalized(std::cos(0.5 * theta), k * rotvec.x(), k * rotvec.y(), k * rotvec.z());
  }

  static Quat rx(double deg) { return from_axis_angle(Vec3::UnitX(), deg2rad(deg)); }
  static Quat ry(double deg) { return from_axis_angle(Vec3::UnitY(), deg2rad(deg)); }
  static Quat rz(double deg) { return from_axis_angle(Vec3::UnitZ(), deg2rad(deg)); }

  double w() const { return w_; }
  double x() const { return x_; }
  double y() const { return y_; }
  double z() const { return z_; }
  Eigen::Vector4d coeffs() const { return {w_, x_, y_, z_}; }
  Vec3 vec() const { return {x_, y_, z_}; }

  Quat conj() const {
    // Conjugation flips the vector part; re-canonicalize for the w == 0 case.
    Quat q = *this;
    q.x_ = -x_;
    q.y_ = -y_;
    q.z_ = -z_;
    q.canonicalize();
    return q;
  }

  /// Rotation vector in (-pi, pi] magnitude, the SO(3) log map.
  Vec3 log() const {
    const Vec3 v = vec();
    const double s = v.norm();
    if (s < 1e-300) {
      return Vec3::Zero();
    }
    // atan2 keeps precision near both 0 and pi; w >= 0 gives angle <= pi.
    const double angle = 2.0 * std::atan2(s, w_);
    return v * (angle / s);
  }

  friend bool operator==(const Quat&, const Quat&) = default;

 private:
  void canonicalize() {
    bool flip = false;
    if (w_ != 0.0) {
      flip = w_ < 0.0;
    } else if (x_ != 0.0) {
      flip = x_ < 0.0;
    } else if (y_ != 0.0) {
      flip = y_ < 0.0;
    } else {
      flip = z_ < 0.0;
    }
    if (flip) {
      w_ = -w_;
      x_ = -x_;
      y_ = -y_;
      z_ = -z_;
    }
    // -0.0 would make byte-level output depend on history.
    w_ += 0.0;
    x_ += 0.0;
    y_ += 0.0;
    z_ += 0.0;
  }

  double w_ = 1.0;
  double x_ = 0.0;
  double y_ = 0.0;
  double z_ = 0.0;
};

inline double quat_dot(const Quat& a, const Quat& b) {
  return a.w() * b.w() + a.x() * b.x() + a.y() * b.y() + a.z() * b.z();
}

/// Hamilton product a * b (apply b first, then a).
inline Quat quat_mul(const Quat& a, const Quat& b) {
  return Quat::normalized(a.w() * b.w() - a.x() * b.x() - a.y() * b.y() - a.z() * b.z(),
                          a.w() * b.x() + a.x() * b.w() + a.y() * b.z() - a.z() * b.y(),
                          a.w() * b.y() - a.x() * b.z() + a.y() * b.w() + a.z() * b.x(),
                          a.w() * b.z() + a.x() * b.y() - a.y() * b.x() + a.z() * b.w());
}

/// Geodesic angle in degrees, [0, 180], invariant to the sign of either argument.
inline double quat_angle(const Quat& a, const Quat& b) {
  const double d = std::min(1.0, std::abs(quat_dot(a, b)));
  return rad2deg(2.0 * std::acos(d));
}

/// Same distance in radians via atan2, accurate for tiny angles.
inline double quat_angle_rad(const Quat& a, const Quat& b) {
  return quat_mul(a.conj(), b).log().norm();
}

inline Vec3 quat_rotate(const Quat& q, const Vec3& v) {
  // v' = v + 2w (u x v) + 2 u x (u x v)
  const Vec3 u = q.vec();
  const Vec3 t = 2.0 * u.cross(v);
  return v + q.w() * t + u.cross(t);
}

inline Mat3 quat_to_matrix(const Quat& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Mat3 m;
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return m;
}

/// Throws NonRotationMatrix unless m is orthonormal within `tol` with det ~ +1.
inline Quat quat_from_matrix(const Mat3& m, double tol = 1e-6) {
  if (!m.allFinite()) {
    throw Error(ErrorCode::NonRotationMatrix, "matrix has non-finite entries");
  }
  const double ortho_err = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double det = m.determinant();
  if (ortho_err > tol || std::abs(det - 1.0) > tol) {
    throw Error(ErrorCode::NonRotationMatrix,
                "orthonormality error " + std::to_string(ortho_err) + ", det " + std::to_string(det));
  }
  // Shepperd: pivot on the largest of the four squared components.
  const double tr = m.trace();
  double w, x, y, z;
  if (tr >= m(0, 0) && tr >= m(1, 1) && tr >= m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + tr);
    w = 0.25 * s;
    x = (m(2, 1) - m(1, 2)) / s;
    y = (m(0, 2) - m(2, 0)) / s;
    z = (m(1, 0) - m(0, 1)) / s;
  } else if (m(0, 0) >= m(1, 1) && m(0, 0) >= m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2));
    w = (m(2, 1) - m(1, 2)) / s;
    x = 0.25 * s;
    y = (m(0, 1) + m(1, 0)) / s;
    z = (m(0, 2) + m(2, 0)) / s;
  } else if (m(1, 1) >= m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 - m(0, 0) + m(1, 1) - m(2, 2));
    w = (m(0, 2) - m(2, 0)) / s;
    x = (m(0, 1) + m(1, 0)) / s;
    y = 0.25 * s;
    z = (m(1, 2) + m(2, 1)) / s;
  } else {
    const double s = 2.0 * std::sqrt(1.0 - m(0, 0) - m(1, 1) + m(2, 2));
    w = (m(1, 0) - m(0, 1)) / s;
    x = (m(0, 2) + m(2, 0)) / s;
    y = (m(1, 2) + m(2, 1)) / s;
    z = 0.25 * s;
  }
  return Quat::normalized(w, x, y, z);
}

/// Unit-length copy of v. Throws ZeroVector below `eps`.
inline Vec3 normalize_dir(const Vec3& v, double eps = 1e-12) {
  const double n = v.norm();
  if (!(n >= eps) || !std::isfinite(n)) {
    throw Error(ErrorCode::ZeroVector, "direction vector has zero or non-finite norm");
  }
  return v / n;
}

/// Angle in degrees between two nonzero vectors, computed with atan2.
inline double vec_angle(const Vec3& a, const Vec3& b) {
  return rad2deg(std::atan2(a.cross(b).norm(), a.dot(b)));
}

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3::UnitX();  ///< unit

  /// Builds a ray, normalizing `direction`.
  static Ray through(const Vec3& origin, const Vec3& direction) {
    return Ray{origin, normalize_dir(direction)};
  }
};

struct Triangulation {
  Vec3 point;  ///< midpoint of the common perpendicular
  double s1 = 0.0;
  double s2 = 0.0;
  double gap = 0.0;  ///< closest distance between the two lines
};

inline constexpr double kParallelEps = 1e-6;

/// Midpoint of the common perpendicular between the lines carrying r1 and r2.
/// Throws DegenerateRays when |d1.d2| > 1 - parallel_eps.
inline Triangulation triangulate_midpoint(const Ray& r1, const Ray& r2,
                                          double parallel_eps = kParallelEps) {
  const double b = r1.dir.dot(r2.dir);
  if (std::abs(b) > 1.0 - parallel_eps) {
    throw Error(ErrorCode::DegenerateRays, "rays are near-parallel (|d1.d2| = " + std::to_string(b) + ")");
  }
  // Normal equations of min |w + s1 d1 - s2 d2|^2 with w = o1 - o2.
  const Vec3 w = r1.origin - r2.origin;
  const double d = r1.dir.dot(w);
  const double e = r2.dir.dot(w);
  const double denom = 1.0 - b * b;
  Triangulation t;
  t.s1 = (b * e - d) / denom;
  t.s2 = (e - b * d) / denom;
  const Vec3 p1 = r1.origin + t.s1 * r1.dir;
  const Vec3 p2 = r2.origin + t.s2 * r2.dir;
  t.point = 0.5 * (p1 + p2);
  t.gap = (p1 - p2).norm();
  return t;
}

}  // namespace relocnet
