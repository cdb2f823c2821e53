#pragma once

// Finite-difference oracle for the analytic factor Jacobians.
//
// Residuals for the oracle are recomputed from the spline's public queries
// (pose_at / angvel_at / accel_at) on a perturbed copy of the trajectory, so
// the check never goes through the analytic chain it is validating.

#include "ctlio/factors.hpp"
#include "ctlio/rng.hpp"

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>

namespace ctlio {

enum class BlockFamily { LidarRot = 0, LidarPos, OmegaRot, AccelRot, AccelPos, Bias };
inline constexpr int kNumBlockFamilies = 6;

inline std::string_view family_name(BlockFamily f) {
  switch (f) {
    case BlockFamily::LidarRot: return "lidar-rot";
    case BlockFamily::LidarPos: return "lidar-pos";
    case BlockFamily::OmegaRot: return "omega-rot";
    case BlockFamily::AccelRot: return "accel-rot";
    case BlockFamily::AccelPos: return "accel-pos";
    case BlockFamily::Bias: return "bias";
  }
  return "?";
}

inline bool parse_family(std::string_view s, BlockFamily& out) {
  for (int k = 0; k < kNumBlockFamilies; ++k) {
    if (family_name(static_cast<BlockFamily>(k)) == s) {
      out = static_cast<BlockFamily>(k);
      return true;
    }
  }
  return false;
}

struct JacobianCheckOptions {
  std::uint64_t seed = 1;
  int trials = 200;
  double step = 1e-6;
  double tolerance = 1e-5;
  double max_rot_delta = 0.5;  // rad per knot
  /// Test hook: negate the analytic block of this family before comparing.
  std::optional<BlockFamily> inject_sign_flip;
};

struct FamilyStat {
  double max_rel_error = 0.0;
  std::uint64_t worst_instance_seed = 0;
  int blocks_checked = 0;
};

struct JacobianCheckReport {
  std::array<FamilyStat, kNumBlockFamilies> families{};
  int trials = 0;
  double tolerance = 0.0;
  bool passed() const {
    for (const auto& f : families) {
      if (!(f.max_rel_error < tolerance) || f.blocks_checked == 0) return false;
    }
    return true;
  }
};

/// Relative block error: max|A − F| / max(1, max|F|).
template <typename A, typename B>
double block_rel_error(const Eigen::MatrixBase<A>& analytic, const Eigen::MatrixBase<B>& fd) {
  const double diff = (analytic - fd).cwiseAbs().maxCoeff();
  const double scale = std::max(1.0, fd.cwiseAbs().maxCoeff());
  return diff / scale;
}

/// Random spline with bounded relative rotation per knot.
inline SplineTrajectory random_spline(Rng& rng, int order, int num_ctrl, double dt, double max_rot_delta) {
  std::vector<Pose> ctrl;
  Rot3 r = Rot3::exp(rng.unit3() * rng.uniform(0.0, 3.0));
  Vec3 p = rng.uniform3(-2.0, 2.0);
  for (int m = 0; m < num_ctrl; ++m) {
    ctrl.emplace_back(r, p);
    r = r.boxplus(rng.unit3() * rng.uniform(0.0, max_rot_delta));
    p += rng.uniform3(-0.3, 0.3);
  }
  return SplineTrajectory(rng.uniform(-1.0, 1.0), dt, order, std::move(ctrl));
}

namespace detail {

inline double oracle_lidar(const LidarFactor& f, const SplineTrajectory& traj) {
  const Pose pose = traj.pose_at(f.t);
  return f.normal.dot(pose * f.f_body) + f.mu;
}

inline Vec12 oracle_imu(const ImuFactor& f, const SplineTrajectory& traj, const ImuBiases& b,
                        const GravityModel& g) {
  const Pose pose = traj.pose_at(f.t);
  Vec12 r;
  r.segment<3>(0) = traj.angvel_at(f.t) + b.gyro - f.gyro;
  r.segment<3>(3) = pose.rot.matrix().transpose() * (traj.accel_at(f.t) + g.g_world) + b.accel - f.accel;
  r.segment<3>(6) = b.gyro - f.bias_prior.gyro;
  r.segment<3>(9) = b.accel - f.bias_prior.accel;
  return r;
}

inline SplineTrajectory perturbed(const SplineTrajectory& traj, int m, int axis, double h) {
  SplineTrajectory out = traj;
  Vec6 d = Vec6::Zero();
  d(axis) = h;
  out.control(m) = boxplus(out.control(m), d);
  return out;
}

inline void record(FamilyStat& st, double err, std::uint64_t inst_seed) {
  ++st.blocks_checked;
  if (err > st.max_rel_error || std::isnan(err)) {
    st.max_rel_error = std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
    st.worst_instance_seed = inst_seed;
  }
}

}  // namespace detail

/// Runs one random lidar + IMU instance and folds its block errors into `rep`.
inline void check_instance(std::uint64_t inst_seed, int order, const JacobianCheckOptions& opt,
                           JacobianCheckReport& rep) {
  Rng rng(inst_seed);
  const double dt = rng.uniform(0.05, 0.2);
  const SplineTrajectory traj = random_spline(rng, order, order + 3, dt, opt.max_rot_delta);
  const double t = rng.uniform(traj.t0(), traj.t_end());
  const double h = opt.step;
  const GravityModel grav;

  auto flip = [&](BlockFamily fam) { return opt.inject_sign_flip && *opt.inject_sign_flip == fam ? -1.0 : 1.0; };

  // Lidar factor.
  LidarFactor lf;
  lf.t = t;
  lf.f_body = rng.uniform3(-10.0, 10.0);
  lf.normal = rng.unit3();
  lf.mu = rng.uniform(-5.0, 5.0);
  const LidarEvaluation lev = lidar_residual_jacobian(lf, traj);

  // IMU factor.
  ImuFactor imf;
  imf.t = t;
  imf.gyro = rng.normal3(1.0);
  imf.accel = rng.normal3(5.0);
  imf.bias_prior.gyro = rng.normal3(0.05);
  imf.bias_prior.accel = rng.normal3(0.1);
  ImuBiases bias;
  bias.gyro = rng.normal3(0.05);
  bias.accel = rng.normal3(0.1);
  const ImuEvaluation iev = imu_residual_jacobian(imf, traj, bias, grav);

  for (int j = 0; j < order; ++j) {
    const int m = lev.i + j;
    Eigen::Matrix<double, 1, 6> fd_l;
    Eigen::Matrix<double, 12, 6> fd_i;
    for (int axis = 0; axis < 6; ++axis) {
      const SplineTrajectory tp = detail::perturbed(traj, m, axis, h);
      const SplineTrajectory tm = detail::perturbed(traj, m, axis, -h);
      fd_l(axis) = (detail::oracle_lidar(lf, tp) - detail::oracle_lidar(lf, tm)) / (2.0 * h);
      fd_i.col(axis) = (detail::oracle_imu(imf, tp, bias, grav) - detail::oracle_imu(imf, tm, bias, grav)) / (2.0 * h);
    }
    auto& fams = rep.families;
    detail::record(fams[0], block_rel_error(flip(BlockFamily::LidarRot) * lev.d_rot[j], fd_l.leftCols<3>()), inst_seed);
    detail::record(fams[1], block_rel_error(flip(BlockFamily::LidarPos) * lev.d_pos[j], fd_l.rightCols<3>()), inst_seed);
    detail::record(fams[2], block_rel_error(flip(BlockFamily::OmegaRot) * iev.domega_drot[j], fd_i.block<3, 3>(0, 0)), inst_seed);
    detail::record(fams[3], block_rel_error(flip(BlockFamily::AccelRot) * iev.dacc_drot[j], fd_i.block<3, 3>(3, 0)), inst_seed);
    detail::record(fams[4], block_rel_error(flip(BlockFamily::AccelPos) * iev.dacc_dpos[j], fd_i.block<3, 3>(3, 3)), inst_seed);
    // The remaining entries of the 12×6 block must be structurally zero.
    Mat12x6 zero_part = fd_i;
    zero_part.block<3, 3>(0, 0).setZero();
    zero_part.block<3, 3>(3, 0).setZero();
    zero_part.block<3, 3>(3, 3).setZero();
    detail::record(fams[4], zero_part.cwiseAbs().maxCoeff(), inst_seed);
  }

  // Bias block: perturb the biases additively.
  Mat12x6 fd_b;
  for (int axis = 0; axis < 6; ++axis) {
    ImuBiases bp = bias, bm = bias;
    if (axis < 3) {
      bp.gyro(axis) += h;
      bm.gyro(axis) -= h;
    } else {
      bp.accel(axis - 3) += h;
      bm.accel(axis - 3) -= h;
    }
    fd_b.col(axis) = (detail::oracle_imu(imf, traj, bp, grav) - detail::oracle_imu(imf, traj, bm, grav)) / (2.0 * h);
  }
  detail::record(rep.families[5], block_rel_error(flip(BlockFamily::Bias) * ImuEvaluation::bias_block(), fd_b), inst_seed);
}

inline std::uint64_t instance_seed(std::uint64_t seed, int trial) {
  return splitmix64(seed ^ splitmix64(0xC0FFEEULL + static_cast<std::uint64_t>(trial)));
}

inline JacobianCheckReport check_jacobians(const JacobianCheckOptions& opt) {
  JacobianCheckReport rep;
  rep.trials = opt.trials;
  rep.tolerance = opt.tolerance;
  for (int k = 0; k < opt.trials; ++k) check_instance(instance_seed(opt.seed, k), 3 + k % 2, opt, rep);
  return rep;
}

}  // namespace ctlio
