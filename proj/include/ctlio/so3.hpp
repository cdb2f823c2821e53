#pragma once

// Minimal SO(3)/SE(3) kernel.
//
// Perturbation convention (used by every Jacobian in this library):
//   rotation    R ⊞ δθ = R · Exp(δθ)      (right / body-frame perturbation)
//   translation p ⊞ δp = p + δp           (world frame)
// A 6-vector increment on a pose is ordered (δθ, δp).

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>

namespace ctlio {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

namespace so3 {

inline constexpr double kExpSeriesThreshold = 1e-8;
inline constexpr double kJacobianSeriesThreshold = 1e-6;

inline Mat3 hat(const Vec3& v) {
  Mat3 m;
  // clang-format off
  m <<     0.0, -v.z(),  v.y(),
         v.z(),    0.0, -v.x(),
        -v.y(),  v.x(),    0.0;
  // clang-format on
  return m;
}

inline Vec3 vee(const Mat3& m) { return Vec3(m(2, 1), m(0, 2), m(1, 0)); }

/// Rodrigues formula. Returns an orthonormal matrix.
inline Mat3 exp(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 k = hat(phi);
  double a, b;
  if (theta < kExpSeriesThreshold) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Mat3::Identity() + a * k + b * k * k;
}

/// Inverse of exp on the principal branch, ‖result‖ ≤ π.
/// Goes through the quaternion (Shepperd's largest-diagonal branch), so the
/// angle-π case picks a well-conditioned axis.
inline Vec3 log(const Mat3& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 v = q.vec();
  const double n = v.norm();
  const double w = q.w();
  if (n < kExpSeriesThreshold) {
    // 2·atan(n/w)/n ≈ (2/w)(1 − n²/(3w²))
    return (2.0 / w) * (1.0 - n * n / (3.0 * w * w)) * v;
  }
  return (2.0 * std::atan2(n, w) / n) * v;
}

/// Right Jacobian: Exp(φ + δ) ≈ Exp(φ)·Exp(Jr(φ)·δ).
inline Mat3 right_jacobian(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 k = hat(phi);
  if (theta2 < kJacobianSeriesThreshold * kJacobianSeriesThreshold) {
    return Mat3::Identity() - 0.5 * k + (1.0 / 6.0) * k * k;
  }
  const double theta = std::sqrt(theta2);
  const double half_sin = std::sin(0.5 * theta);
  const double a = 2.0 * half_sin * half_sin / theta2;  // (1 − cos θ)/θ², cancellation-free
  // (θ − sin θ)/θ³ loses digits for small θ; its series is exact to rounding below 1e-2.
  const double b = theta < 1e-2 ? 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0
                                : (theta - std::sin(theta)) / (theta2 * theta);
  return Mat3::Identity() - a * k + b * k * k;
}

/// Inverse right Jacobian. Uses cot(θ/2) so that θ = π stays finite.
inline Mat3 right_jacobian_inv(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 k = hat(phi);
  if (theta2 < kJacobianSeriesThreshold * kJacobianSeriesThreshold) {
    return Mat3::Identity() + 0.5 * k + (1.0 / 12.0) * k * k;
  }
  const double theta = std::sqrt(theta2);
  // 1/θ² − (1 + cos θ)/(2θ sin θ) == 1/θ² − cot(θ/2)/(2θ)
  const double c = theta < 1e-2 ? 1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
                                : 1.0 / theta2 - 1.0 / (2.0 * theta * std::tan(0.5 * theta));
  return Mat3::Identity() + 0.5 * k + c * k * k;
}

/// Re-orthonormalize a rotation matrix that accumulated rounding drift.
inline Mat3 normalized(const Mat3& r) {
  return Eigen::Quaterniond(r).normalized().toRotationMatrix();
}

}  // namespace so3

/// Rotation in SO(3), stored as an orthonormal matrix.
class Rot3 {
 public:
  Rot3() : m_(Mat3::Identity()) {}
  explicit Rot3(const Mat3& m) : m_(so3::normalized(m)) {}
  explicit Rot3(const Eigen::Quaterniond& q) : m_(q.normalized().toRotationMatrix()) {}

  static Rot3 identity() { return Rot3(); }
  static Rot3 exp(const Vec3& phi) { return from_orthonormal(so3::exp(phi)); }

  /// Wraps a matrix that is already orthonormal to working precision.
  static Rot3 from_orthonormal(const Mat3& m) {
    Rot3 r;
    r.m_ = m;
    return r;
  }

  Vec3 log() const { return so3::log(m_); }
  const Mat3& matrix() const { return m_; }
  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(m_).normalized(); }

  Rot3 inverse() const { return from_orthonormal(m_.transpose()); }
  Rot3 operator*(const Rot3& o) const { return from_orthonormal(m_ * o.m_); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  /// R · Exp(δθ), renormalized.
  /// A zero increment returns this rotation bit-for-bit.
  Rot3 boxplus(const Vec3& dtheta) const { return dtheta.isZero(0.0) ? *this : Rot3(m_ * so3::exp(dtheta)); }

  /// Log(this⁻¹ · o): the right-perturbation difference.
  Vec3 boxminus(const Rot3& o) const { return so3::log(m_.transpose() * o.m_); }

  double orthonormality_error() const {
    return (m_.transpose() * m_ - Mat3::Identity()).cwiseAbs().maxCoeff();
  }

 private:
  Mat3 m_;
};

/// Rigid transform T = (R, p): x_world = R·x_body + p.
struct Pose {
  Rot3 rot;
  Vec3 pos = Vec3::Zero();

  Pose() = default;
  Pose(const Rot3& r, const Vec3& p) : rot(r), pos(p) {}

  static Pose identity() { return Pose(); }

  Pose operator*(const Pose& o) const { return Pose(rot * o.rot, rot * o.pos + pos); }
  Vec3 operator*(const Vec3& x) const { return rot * x + pos; }
  Pose inverse() const {
    const Rot3 ri = rot.inverse();
    return Pose(ri, -(ri * pos));
  }
};

/// T ⊞ δ = (R·Exp(δθ), p + δp) with δ = (δθ, δp).
inline Pose boxplus(const Pose& t, const Vec6& delta) {
  return Pose(t.rot.boxplus(delta.head<3>()), t.pos + delta.tail<3>());
}

}  // namespace ctlio
