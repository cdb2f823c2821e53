#include "ctlio/factors.hpp"
#include "ctlio/jacobian_check.hpp"

#include <gtest/gtest.h>

using namespace ctlio;

namespace {

SplineTrajectory constant_spline(const Pose& p, int order = 4) {
  return SplineTrajectory(0.0, 0.1, order, std::vector<Pose>(8, p));
}

}  // namespace

TEST(Lidar, PointOnPlaneHasZeroResidual) {
  const auto traj = constant_spline(Pose(Rot3(), Vec3(0, 0, 1)));
  LidarFactor f;
  f.normal = Vec3(0, 0, 1);
  f.mu = -1.0;
  f.t = 0.25;
  EXPECT_NEAR(lidar_residual(f, traj), 0.0, 1e-15);
  EXPECT_NEAR(lidar_residual_jacobian(f, traj).r, 0.0, 1e-15);
}

TEST(Lidar, OffsetPose) {
  const auto traj = constant_spline(Pose(Rot3(), Vec3(0, 0, 1.5)));
  LidarFactor f;
  f.normal = Vec3(0, 0, 1);
  f.mu = -1.0;
  f.t = 0.25;
  EXPECT_NEAR(lidar_residual_jacobian(f, traj).r, 0.5, 1e-15);
}

TEST(Lidar, PositionBlocksAreLambdaTimesNormal) {
  Rng rng(4);
  const auto traj = random_spline(rng, 4, 8, 0.1, 0.5);
  LidarFactor f;
  f.normal = rng.unit3();
  f.f_body = rng.uniform3(-3, 3);
  f.t = traj.t0() + 0.237;
  const auto ev = lidar_residual_jacobian(f, traj);
  const auto c = traj.coefficients(f.t);
  for (int j = 0; j < 4; ++j) EXPECT_LT((ev.d_pos[j] - c.lambda(j) * f.normal.transpose()).norm(), 1e-15);
}

TEST(Lidar, InvariantUnderRigidTransform) {
  Rng rng(5);
  for (int k = 0; k < 50; ++k) {
    const auto traj = random_spline(rng, 4, 8, 0.1, 0.5);
    const Pose g(Rot3::exp(rng.unit3() * rng.uniform(0, 3)), rng.uniform3(-20, 20));
    std::vector<Pose> moved;
    for (const Pose& c : traj.controls()) moved.push_back(g * c);
    const SplineTrajectory traj_g(traj.t0(), traj.dt(), traj.order(), moved);
    LidarFactor f;
    f.normal = rng.unit3();
    f.mu = rng.uniform(-5, 5);
    f.f_body = rng.uniform3(-10, 10);
    f.t = rng.uniform(traj.t0(), traj.t_end());
    LidarFactor fg = f;
    fg.normal = g.rot * f.normal;
    fg.mu = f.mu - fg.normal.dot(g.pos);
    EXPECT_NEAR(lidar_residual(f, traj), lidar_residual(fg, traj_g), 1e-10);
  }
}

TEST(Lidar, OutOfDomainThrows) {
  const auto traj = constant_spline(Pose());
  LidarFactor f;
  f.t = 10.0;
  EXPECT_THROW(lidar_residual_jacobian(f, traj), std::out_of_range);
}

TEST(Imu, GravityOnlyEquilibrium) {
  const auto traj = constant_spline(Pose());
  ImuFactor f;
  f.t = 0.3;
  f.accel = Vec3(0, 0, 9.81);
  const auto ev = imu_residual_jacobian(f, traj, ImuBiases{});
  EXPECT_LT(ev.r.norm(), 1e-12);
}

TEST(Imu, BiasEqualToPrior) {
  Rng rng(6);
  const auto traj = random_spline(rng, 4, 8, 0.1, 0.5);
  ImuFactor f;
  f.t = traj.t0() + 0.21;
  f.bias_prior.gyro = Vec3(0.1, 0, 0);
  ImuBiases b;
  b.gyro = Vec3(0.1, 0, 0);
  const auto ev = imu_residual_jacobian(f, traj, b);
  EXPECT_LT((ev.r.segment<3>(0) - (traj.angvel_at(f.t) + Vec3(0.1, 0, 0))).norm(), 1e-12);
  EXPECT_EQ(ev.r.segment<3>(6), Vec3::Zero());
  EXPECT_EQ(ev.r.segment<3>(9), Vec3::Zero());
}

TEST(Imu, ResidualMatchesSplineQueries) {
  Rng rng(7);
  const auto traj = random_spline(rng, 4, 8, 0.1, 0.5);
  ImuFactor f;
  f.t = traj.t0() + 0.33;
  f.gyro = rng.normal3(1);
  f.accel = rng.normal3(5);
  ImuBiases b;
  b.accel = rng.normal3(0.1);
  const Vec12 r = imu_residual(f, traj, b);
  const Vec12 r2 = imu_residual_jacobian(f, traj, b).r;
  EXPECT_LT((r - r2).norm(), 1e-14);
  const Pose p = traj.pose_at(f.t);
  const Vec3 a = p.rot.matrix().transpose() * (traj.accel_at(f.t) + Vec3(0, 0, 9.81)) + b.accel - f.accel;
  EXPECT_LT((r.segment<3>(3) - a).norm(), 1e-10);
}

TEST(Imu, BiasRowsAreExactIdentity) {
  const Mat12x6 b = ImuEvaluation::bias_block();
  for (int r = 0; r < 12; ++r)
    for (int c = 0; c < 6; ++c) {
      const bool one = (r < 3 && c == r) || (r >= 3 && r < 6 && c == r) || (r >= 6 && r < 9 && c == r - 6) ||
                       (r >= 9 && c == r - 6);
      EXPECT_EQ(b(r, c), one ? 1.0 : 0.0) << r << "," << c;
    }
}

TEST(Imu, ControlBlockStructuralZeros) {
  Rng rng(8);
  const auto traj = random_spline(rng, 4, 8, 0.1, 0.5);
  ImuFactor f;
  f.t = traj.t0() + 0.17;
  const auto ev = imu_residual_jacobian(f, traj, ImuBiases{});
  for (int j = 0; j < 4; ++j) {
    const Mat12x6 blk = ev.control_block(j);
    EXPECT_EQ((blk.block<3, 3>(0, 3)), Mat3::Zero());
    EXPECT_EQ(blk.bottomRows<6>(), (Eigen::Matrix<double, 6, 6>::Zero()));
  }
}

TEST(Jacobians, MatchFiniteDifferences) {
  JacobianCheckOptions opt;
  opt.seed = 2024;
  const JacobianCheckReport rep = check_jacobians(opt);
  for (int k = 0; k < kNumBlockFamilies; ++k) {
    const auto& fs = rep.families[k];
    EXPECT_GT(fs.blocks_checked, 0);
    EXPECT_LT(fs.max_rel_error, 1e-5) << family_name(static_cast<BlockFamily>(k)) << " worst seed "
                                      << fs.worst_instance_seed;
  }
  EXPECT_TRUE(rep.passed());
}

TEST(Jacobians, HigherOrders) {
  JacobianCheckOptions opt;
  JacobianCheckReport rep;
  rep.tolerance = opt.tolerance;
  for (int order : {2, 5, 6}) {
    for (int k = 0; k < 20; ++k) check_instance(instance_seed(77 + order, k), order, opt, rep);
  }
  for (int k = 0; k < kNumBlockFamilies; ++k) {
    EXPECT_LT(rep.families[k].max_rel_error, 1e-5) << family_name(static_cast<BlockFamily>(k));
  }
}

TEST(Jacobians, InjectedSignFlipIsDetected) {
  for (int k = 0; k < kNumBlockFamilies; ++k) {
    JacobianCheckOptions opt;
    opt.trials = 10;
    opt.inject_sign_flip = static_cast<BlockFamily>(k);
    const JacobianCheckReport rep = check_jacobians(opt);
    EXPECT_FALSE(rep.passed()) << family_name(static_cast<BlockFamily>(k));
    EXPECT_GT(rep.families[k].max_rel_error, 1e-3);
  }
}

TEST(Robust, HuberScaleAndLoss) {
  EXPECT_EQ(huber_scale(0.1, 0.2), 1.0);
  EXPECT_DOUBLE_EQ(huber_scale(0.5, 0.2), 0.4);
  EXPECT_EQ(huber_scale(5.0, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(huber_loss(0.1, 0.2), 0.01);
  EXPECT_DOUBLE_EQ(huber_loss(0.5, 0.2), 2 * 0.2 * 0.5 - 0.04);
}
