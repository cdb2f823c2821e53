#pragma once

// Lidar point-to-plane and IMU factors over the N control points coupled to a
// measurement time, with analytic Jacobians under the right-perturbation
// convention of so3.hpp. Every block here is checked against central finite
// differences (see jacobian_check.hpp).

#include "ctlio/bspline.hpp"

#include <array>
#include <vector>

namespace ctlio {

using Vec12 = Eigen::Matrix<double, 12, 1>;
using RowVec3 = Eigen::RowVector3d;
using Mat12x6 = Eigen::Matrix<double, 12, 6>;

struct GravityModel {
  Vec3 g_world = Vec3(0.0, 0.0, 9.81);
};

struct ImuBiases {
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();
};

/// One body-frame lidar point associated to a world plane nᵀx + μ = 0.
struct LidarFactor {
  Vec3 f_body = Vec3::Zero();
  double t = 0.0;
  Vec3 normal = Vec3::UnitZ();
  double mu = 0.0;
  double weight = 1.0;
};

struct ImuWeights {
  double gyro = 1.0;
  double accel = 1.0;
  double bias_gyro = 1.0;
  double bias_accel = 1.0;
};

struct ImuFactor {
  double t = 0.0;
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();
  ImuBiases bias_prior;
  ImuWeights weights;
};

/// Segment plus the inverse right Jacobians of its relative rotations; depends
/// only on the base knot, so it is shared by all factors in one interval.
struct JacobianSegment : Segment {
  std::array<Mat3, kMaxOrder> jr_inv_pos{};  // Jr⁻¹(d_j)
  std::array<Mat3, kMaxOrder> jr_inv_neg{};  // Jr⁻¹(−d_j)
};

inline JacobianSegment make_jacobian_segment(const SplineTrajectory& traj, int i) {
  JacobianSegment js;
  static_cast<Segment&>(js) = traj.segment(i);
  for (int j = 1; j < js.order; ++j) {
    js.jr_inv_pos[j] = so3::right_jacobian_inv(js.d[j]);
    js.jr_inv_neg[j] = so3::right_jacobian_inv(-js.d[j]);
  }
  return js;
}

/// Segments for a contiguous range of base knots.
class SegmentTable {
 public:
  SegmentTable() = default;
  SegmentTable(const SplineTrajectory& traj, int first, int last) : first_(first) {
    segs_.reserve(static_cast<size_t>(std::max(0, last - first + 1)));
    for (int i = first; i <= last; ++i) segs_.push_back(make_jacobian_segment(traj, i));
  }
  /// Covers every interval of the spline from base knot `first` on.
  static SegmentTable from(const SplineTrajectory& traj, int first) {
    return SegmentTable(traj, first, traj.last_index() - traj.order() + 1);
  }
  const JacobianSegment& at(int i) const { return segs_.at(static_cast<size_t>(i - first_)); }
  int first() const { return first_; }

 private:
  int first_ = 0;
  std::vector<JacobianSegment> segs_;
};

/// ∂R(t)/∂R_{i+j} for j = 0..N−1 (right perturbations on both sides).
struct RotationJacobians {
  std::array<Mat3, kMaxOrder> d_rot{};
  std::array<Mat3, kMaxOrder> jr_scaled{};  // Jr(λ̃_j d_j), j ≥ 1
};

inline RotationJacobians rotation_jacobians(const JacobianSegment& seg, const InterpCoeffs& c,
                                            const RotationChain& ch) {
  const int n_ord = seg.order;
  RotationJacobians out;
  // g[j] = λ̃_j P_j Jr(λ̃_j d_j) for j ≥ 1. The j = 0 first term reduces to P_0
  // (A_0 = R_i, d_0 = Log R_i, λ̃_0 = 1 make Jr·Jr⁻¹ cancel).
  std::array<Mat3, kMaxOrder + 1> g{};
  for (int j = 1; j < n_ord; ++j) {
    out.jr_scaled[j] = so3::right_jacobian(c.cum(j) * seg.d[j]);
    g[j] = c.cum(j) * ch.p[j] * out.jr_scaled[j];
  }
  for (int j = 0; j < n_ord; ++j) {
    Mat3 m = (j == 0) ? ch.p[0] : Mat3(g[j] * seg.jr_inv_pos[j]);
    if (j + 1 < n_ord) m -= g[j + 1] * seg.jr_inv_neg[j + 1];  // λ̃_N = 0 drops this at j = N−1
    out.d_rot[j] = m;
  }
  return out;
}

struct LidarEvaluation {
  double r = 0.0;
  int i = 0;  // base knot
  int order = 0;
  std::array<RowVec3, kMaxOrder> d_rot{};  // ∂r/∂δθ_{i+j}
  std::array<RowVec3, kMaxOrder> d_pos{};  // ∂r/∂δp_{i+j}
};

inline double lidar_residual(const LidarFactor& f, const Segment& seg, const InterpCoeffs& c,
                             const SplineTrajectory& traj) {
  const RotationChain ch = evaluate_chain(seg, c, false);
  return f.normal.dot(ch.rot * f.f_body + traj.position(c)) + f.mu;
}

inline LidarEvaluation lidar_residual_jacobian(const LidarFactor& f, const JacobianSegment& seg,
                                               const InterpCoeffs& c, const SplineTrajectory& traj) {
  const int n_ord = seg.order;
  const RotationChain ch = evaluate_chain(seg, c, false);
  const Vec3 rf = ch.rot * f.f_body;
  LidarEvaluation ev;
  ev.i = c.i;
  ev.order = n_ord;
  ev.r = f.normal.dot(rf + traj.position(c)) + f.mu;

  // R·Exp(θ)·f ≈ R f − R [f]× θ, hence ∂r/∂θ_t = −nᵀ R [f]×.
  // Same chain as rotation_jacobians, contracted from the left with the row
  // vector first so every product is vector-matrix.
  const RowVec3 dr_dtheta = -f.normal.transpose() * ch.rot * so3::hat(f.f_body);
  std::array<RowVec3, kMaxOrder + 1> u{};
  for (int j = 1; j < n_ord; ++j) {
    u[j] = c.cum(j) * (dr_dtheta * ch.p[j]) * so3::right_jacobian(c.cum(j) * seg.d[j]);
  }
  for (int j = 0; j < n_ord; ++j) {
    RowVec3 d = (j == 0) ? RowVec3(dr_dtheta * ch.p[0]) : RowVec3(u[j] * seg.jr_inv_pos[j]);
    if (j + 1 < n_ord) d -= u[j + 1] * seg.jr_inv_neg[j + 1];
    ev.d_rot[j] = d;
    ev.d_pos[j] = c.lambda(j) * f.normal.transpose();
  }
  return ev;
}

inline LidarEvaluation lidar_residual_jacobian(const LidarFactor& f, const SplineTrajectory& traj) {
  const InterpCoeffs c = traj.coefficients(f.t);
  return lidar_residual_jacobian(f, make_jacobian_segment(traj, c.i), c, traj);
}

inline double lidar_residual(const LidarFactor& f, const SplineTrajectory& traj) {
  const InterpCoeffs c = traj.coefficients(f.t);
  return lidar_residual(f, traj.segment(c.i), c, traj);
}

struct ImuEvaluation {
  Vec12 r = Vec12::Zero();  // [r_ω; r_a; r_bω; r_ba]
  int i = 0;
  int order = 0;
  std::array<Mat3, kMaxOrder> domega_drot{};  // ∂r_ω/∂δθ_{i+j}
  std::array<Mat3, kMaxOrder> dacc_drot{};    // ∂r_a/∂δθ_{i+j}
  std::array<Mat3, kMaxOrder> dacc_dpos{};    // ∂r_a/∂δp_{i+j}

  /// Full 12×6 block for control point i+j, columns (δθ, δp).
  Mat12x6 control_block(int j) const {
    Mat12x6 b = Mat12x6::Zero();
    b.block<3, 3>(0, 0) = domega_drot[j];
    b.block<3, 3>(3, 0) = dacc_drot[j];
    b.block<3, 3>(3, 3) = dacc_dpos[j];
    return b;
  }

  /// 12×6 block for (δb_ω, δb_a): identity blocks, exactly.
  static Mat12x6 bias_block() {
    Mat12x6 b = Mat12x6::Zero();
    b.block<3, 3>(0, 0).setIdentity();
    b.block<3, 3>(3, 3).setIdentity();
    b.block<3, 3>(6, 0).setIdentity();
    b.block<3, 3>(9, 3).setIdentity();
    return b;
  }
};

inline Vec12 imu_residual(const ImuFactor& f, const Segment& seg, const InterpCoeffs& c,
                          const SplineTrajectory& traj, const ImuBiases& b, const GravityModel& grav) {
  const RotationChain ch = evaluate_chain(seg, c, true);
  Vec3 acc_world = Vec3::Zero();
  for (int j = 0; j < seg.order; ++j) acc_world += c.lambda_ddot(j) * traj.control(c.i + j).pos;
  Vec12 r;
  r.segment<3>(0) = ch.omega[seg.order] + b.gyro - f.gyro;
  r.segment<3>(3) = ch.rot.transpose() * (acc_world + grav.g_world) + b.accel - f.accel;
  r.segment<3>(6) = b.gyro - f.bias_prior.gyro;
  r.segment<3>(9) = b.accel - f.bias_prior.accel;
  return r;
}

inline ImuEvaluation imu_residual_jacobian(const ImuFactor& f, const JacobianSegment& seg,
                                           const InterpCoeffs& c, const SplineTrajectory& traj,
                                           const ImuBiases& b, const GravityModel& grav) {
  const int n_ord = seg.order;
  const RotationChain ch = evaluate_chain(seg, c, true);
  const RotationJacobians rj = rotation_jacobians(seg, c, ch);

  Vec3 acc_world = Vec3::Zero();
  for (int j = 0; j < n_ord; ++j) acc_world += c.lambda_ddot(j) * traj.control(c.i + j).pos;
  const Mat3 rt = ch.rot.transpose();
  const Vec3 acc_body = rt * (acc_world + grav.g_world);
  const Vec3 omega = ch.omega[n_ord];

  ImuEvaluation ev;
  ev.i = c.i;
  ev.order = n_ord;
  ev.r.segment<3>(0) = omega + b.gyro - f.gyro;
  ev.r.segment<3>(3) = acc_body + b.accel - f.accel;
  ev.r.segment<3>(6) = b.gyro - f.bias_prior.gyro;
  ev.r.segment<3>(9) = b.accel - f.bias_prior.accel;

  // ∂ω/∂d_j = P_j (λ̃_j A_jᵀ [ω^(j)]× Jr(−λ̃_j d_j) + dλ̃_j/dt · I), j = 1..N−1;
  // zero for j = 0 and j = N. Jr(−φ) = Jr(φ)ᵀ.
  std::array<Mat3, kMaxOrder + 1> dw_dd{};
  dw_dd[0].setZero();
  dw_dd[n_ord].setZero();
  for (int j = 1; j < n_ord; ++j) {
    dw_dd[j] = ch.p[j] * (c.cum(j) * ch.a[j].transpose() * so3::hat(ch.omega[j]) * rj.jr_scaled[j].transpose() +
                          c.cum_dot(j) * Mat3::Identity());
  }
  const Mat3 acc_hat = so3::hat(acc_body);
  for (int j = 0; j < n_ord; ++j) {
    Mat3 dw = Mat3::Zero();
    if (j >= 1) dw += dw_dd[j] * seg.jr_inv_pos[j];
    if (j + 1 < n_ord) dw -= dw_dd[j + 1] * seg.jr_inv_neg[j + 1];
    ev.domega_drot[j] = dw;
    // (R Exp θ)ᵀ v ≈ Rᵀv + [Rᵀv]× θ
    ev.dacc_drot[j] = acc_hat * rj.d_rot[j];
    ev.dacc_dpos[j] = c.lambda_ddot(j) * rt;
  }
  return ev;
}

inline ImuEvaluation imu_residual_jacobian(const ImuFactor& f, const SplineTrajectory& traj,
                                           const ImuBiases& b, const GravityModel& grav = {}) {
  const InterpCoeffs c = traj.coefficients(f.t);
  return imu_residual_jacobian(f, make_jacobian_segment(traj, c.i), c, traj, b, grav);
}

inline Vec12 imu_residual(const ImuFactor& f, const SplineTrajectory& traj, const ImuBiases& b,
                          const GravityModel& grav = {}) {
  const InterpCoeffs c = traj.coefficients(f.t);
  return imu_residual(f, traj.segment(c.i), c, traj, b, grav);
}

/// Per-row weights of an IMU residual block.
inline Vec12 imu_row_weights(const ImuWeights& w) {
  Vec12 out;
  out.segment<3>(0).setConstant(w.gyro);
  out.segment<3>(3).setConstant(w.accel);
  out.segment<3>(6).setConstant(w.bias_gyro);
  out.segment<3>(9).setConstant(w.bias_accel);
  return out;
}

/// Huber multiplier on a lidar weight: 1 inside the threshold, δ/|r| outside.
/// A non-positive threshold disables it.
inline double huber_scale(double r, double threshold) {
  if (threshold <= 0.0) return 1.0;
  const double a = std::abs(r);
  return a <= threshold ? 1.0 : threshold / a;
}

/// Huber loss ρ(r): r² inside the threshold, 2δ|r| − δ² outside.
inline double huber_loss(double r, double threshold) {
  const double a = std::abs(r);
  if (threshold <= 0.0 || a <= threshold) return r * r;
  return 2.0 * threshold * a - threshold * threshold;
}

}  // namespace ctlio
