#pragma once

#include "ctlio/assembly.hpp"
#include "ctlio/jacobian_check.hpp"
#include "ctlio/rng.hpp"

namespace fixtures {

using namespace ctlio;

/// Factors that are satisfied exactly by `traj` and `bias`.
inline FactorSet consistent_factors(const SplineTrajectory& traj, const ImuBiases& bias, int num_imu, int num_lidar,
                                    Rng& rng, double t_lo, double t_hi) {
  FactorSet fs;
  const GravityModel g;
  for (int k = 0; k < num_imu; ++k) {
    ImuFactor f;
    f.t = t_lo + (t_hi - t_lo) * (k + 0.5) / num_imu;
    const Pose p = traj.pose_at(f.t);
    f.gyro = traj.angvel_at(f.t) + bias.gyro;
    f.accel = p.rot.matrix().transpose() * (traj.accel_at(f.t) + g.g_world) + bias.accel;
    f.bias_prior = bias;
    f.weights = ImuWeights{100.0, 10.0, 1.0, 1.0};
    fs.imu.push_back(f);
  }
  for (int k = 0; k < num_lidar; ++k) {
    LidarFactor f;
    f.t = rng.uniform(t_lo, t_hi);
    f.f_body = rng.uniform3(-8.0, 8.0);
    f.normal = rng.unit3();
    f.mu = -f.normal.dot(traj.pose_at(f.t) * f.f_body);
    fs.lidar.push_back(f);
  }
  std::sort(fs.lidar.begin(), fs.lidar.end(), [](const LidarFactor& a, const LidarFactor& b) { return a.t < b.t; });
  return fs;
}

/// Random factors (not consistent with any trajectory).
inline FactorSet random_factors(const SplineTrajectory& traj, int num_imu, int num_lidar, Rng& rng) {
  FactorSet fs;
  const double lo = traj.t0(), hi = traj.t_end() - 1e-9;
  for (int k = 0; k < num_imu; ++k) {
    ImuFactor f;
    f.t = rng.uniform(lo, hi);
    f.gyro = rng.normal3(1.0);
    f.accel = rng.normal3(5.0);
    f.bias_prior.gyro = rng.normal3(0.01);
    f.weights = ImuWeights{rng.uniform(1, 10), rng.uniform(1, 10), rng.uniform(1, 10), rng.uniform(1, 10)};
    fs.imu.push_back(f);
  }
  for (int k = 0; k < num_lidar; ++k) {
    LidarFactor f;
    f.t = rng.uniform(lo, hi);
    f.f_body = rng.uniform3(-5, 5);
    f.normal = rng.unit3();
    f.mu = rng.uniform(-3, 3);
    f.weight = rng.uniform(0.5, 2.0);
    fs.lidar.push_back(f);
  }
  return fs;
}

inline SplineTrajectory perturb_controls(const SplineTrajectory& traj, Rng& rng, double rot, double pos) {
  SplineTrajectory out = traj;
  for (int m = 0; m < out.num_control(); ++m) {
    Vec6 d;
    d << rng.normal3(rot), rng.normal3(pos);
    out.control(m) = boxplus(out.control(m), d);
  }
  return out;
}

}  // namespace fixtures
