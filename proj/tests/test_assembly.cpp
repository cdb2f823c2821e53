#include "ctlio/assembly.hpp"
#include "fixtures.hpp"

#include <gtest/gtest.h>

using namespace ctlio;

namespace {

struct Window {
  SplineTrajectory traj;
  FactorSet fs;
  ImuBiases bias;
};

Window random_window(std::uint64_t seed, int num_imu, int num_lidar, int order = 4) {
  Rng rng(seed);
  Window w;
  w.traj = random_spline(rng, order, 12, 0.1, 0.4);
  w.fs = fixtures::random_factors(w.traj, num_imu, num_lidar, rng);
  w.bias.gyro = rng.normal3(0.01);
  w.bias.accel = rng.normal3(0.1);
  return w;
}

}  // namespace

TEST(Allocate, Dimensions) {
  const LinearSystem sys = allocate(2, 5, 4, 3);
  EXPECT_EQ(sys.rows(), 29);
  EXPECT_EQ(sys.cols(), 30);
  EXPECT_EQ(sys.res.size(), 29);
  EXPECT_EQ(sys.jac.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(sys.bias_col(), 24);
}

TEST(Allocate, RowIndexFormulas) {
  EXPECT_EQ(lidar_row(5, 2), 29);
  EXPECT_EQ(lidar_row(0, 2), 24);
  EXPECT_EQ(imu_row(1), 12);
}

TEST(Allocate, RejectsBadCounts) {
  EXPECT_THROW(allocate(0, 5, 4, 3), std::invalid_argument);
  EXPECT_THROW(allocate(2, 5, 2, 3), std::invalid_argument);
  EXPECT_THROW(allocate(2, 9001, 10, 4, 0, 8000), std::length_error);
}

TEST(Fill, SingleLidarFactorPlacement) {
  Rng rng(3);
  const SplineTrajectory traj = random_spline(rng, 4, 10, 0.1, 0.4);
  FactorSet fs;
  ImuFactor imf;
  imf.t = traj.t0() + 0.05;
  fs.imu.push_back(imf);
  LidarFactor lf;
  lf.t = traj.t0() + 0.43;
  lf.f_body = Vec3(1, 2, 3);
  lf.normal = Vec3(0, 0.6, 0.8);
  fs.lidar.push_back(lf);
  LinearSystem sys = allocate_for(fs, 10, 4, 0);
  fill_parallel(sys, fs, traj, ImuBiases{}, FillOptions{1, 0.0, {}});
  const LidarEvaluation ev = lidar_residual_jacobian(lf, traj);
  const int row = lidar_row(0, 1);
  EXPECT_EQ(ev.i, 4);
  Eigen::RowVectorXd expect = Eigen::RowVectorXd::Zero(sys.cols());
  for (int j = 0; j < 4; ++j) {
    expect.segment<3>(6 * (ev.i + j)) = ev.d_rot[j];
    expect.segment<3>(6 * (ev.i + j) + 3) = ev.d_pos[j];
  }
  EXPECT_EQ(Eigen::RowVectorXd(sys.jac.row(row)), expect);
  EXPECT_EQ(sys.res(row), ev.r);
  EXPECT_EQ(sys.weight(row), 1.0);
}

TEST(Fill, ImuRowsCarryBiasIdentity) {
  Window w = random_window(4, 20, 0);
  LinearSystem sys = allocate_for(w.fs, 12, 4, 0);
  fill_parallel(sys, w.fs, w.traj, w.bias);
  for (int b = 0; b < 20; ++b) {
    EXPECT_EQ(sys.jac.block(imu_row(b), sys.bias_col(), 12, 6), ImuEvaluation::bias_block());
    const int col = sys.band_col[static_cast<std::size_t>(imu_row(b))];
    for (int c = 0; c < sys.bias_col(); ++c) {
      if (c >= col && c < col + 24) continue;
      EXPECT_EQ(sys.jac.col(c).segment(imu_row(b), 12).cwiseAbs().maxCoeff(), 0.0);
    }
  }
}

TEST(Fill, ThreadCountIndependent) {
  const Window w = random_window(5, 60, 3000);
  LinearSystem ref = allocate_for(w.fs, 12, 4, 0);
  fill_parallel(ref, w.fs, w.traj, w.bias, FillOptions{1, 0.2, {}});
  for (int threads : {2, 4, 8}) {
    LinearSystem sys = allocate_for(w.fs, 12, 4, 0);
    fill_parallel(sys, w.fs, w.traj, w.bias, FillOptions{threads, 0.2, {}});
    EXPECT_EQ(std::memcmp(sys.jac.data(), ref.jac.data(), sizeof(double) * ref.jac.size()), 0) << threads;
    EXPECT_EQ(std::memcmp(sys.res.data(), ref.res.data(), sizeof(double) * ref.res.size()), 0) << threads;
    EXPECT_EQ(std::memcmp(sys.weight.data(), ref.weight.data(), sizeof(double) * ref.weight.size()), 0);
  }
}

TEST(Fill, RefillIsIdempotent) {
  const Window w = random_window(6, 10, 100);
  LinearSystem a = allocate_for(w.fs, 12, 4, 0);
  fill_parallel(a, w.fs, w.traj, w.bias);
  const RowMajorMatrix first = a.jac;
  fill_parallel(a, w.fs, w.traj, w.bias);
  EXPECT_EQ(a.jac, first);
}

TEST(Fill, RejectsFactorOutsideWindow) {
  const Window w = random_window(7, 5, 20);
  LinearSystem sys = allocate_for(w.fs, 6, 4, 3);
  EXPECT_THROW(fill_parallel(sys, w.fs, w.traj, w.bias), std::out_of_range);
}

TEST(Fill, HuberScalesLargeResiduals) {
  Rng rng(8);
  const SplineTrajectory traj = random_spline(rng, 4, 8, 0.1, 0.3);
  FactorSet fs;
  fs.imu.push_back(ImuFactor{traj.t0() + 0.1, {}, {}, {}, {}});
  LidarFactor lf;
  lf.t = traj.t0() + 0.2;
  lf.normal = Vec3::UnitZ();
  lf.mu = -traj.pose_at(lf.t).pos.z() + 1.0;  // r = 1.0
  lf.weight = 2.0;
  fs.lidar.push_back(lf);
  LinearSystem sys = allocate_for(fs, 8, 4, 0);
  fill_parallel(sys, fs, traj, ImuBiases{}, FillOptions{1, 0.2, {}});
  EXPECT_NEAR(sys.res(12), 1.0, 1e-12);
  EXPECT_NEAR(sys.weight(12), 2.0 * 0.2, 1e-12);
}

TEST(NormalEquations, IdentityJacobian) {
  LinearSystem sys;
  sys.jac = RowMajorMatrix::Identity(6, 6);
  sys.res = Eigen::VectorXd::Ones(6);
  sys.weight = Eigen::VectorXd::Ones(6);
  const NormalEquations ne = normal_equations_dense(sys);
  EXPECT_EQ(ne.hessian, Eigen::MatrixXd::Identity(6, 6));
  EXPECT_EQ(ne.gradient, -Eigen::VectorXd::Ones(6));
}

TEST(NormalEquations, BandedMatchesDense) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (int order : {3, 4}) {
      const Window w = random_window(100 + seed, 10, 40, order);
      LinearSystem sys = allocate_for(w.fs, 12, order, 0);
      fill_parallel(sys, w.fs, w.traj, w.bias);
      const NormalEquations banded = normal_equations(sys);
      const NormalEquations dense = normal_equations_dense(sys);
      const double hs = std::max(1.0, dense.hessian.cwiseAbs().maxCoeff());
      const double gs = std::max(1.0, dense.gradient.cwiseAbs().maxCoeff());
      EXPECT_LT((banded.hessian - dense.hessian).cwiseAbs().maxCoeff() / hs, 1e-10);
      EXPECT_LT((banded.gradient - dense.gradient).cwiseAbs().maxCoeff() / gs, 1e-10);
      EXPECT_LT((banded.hessian - banded.hessian.transpose()).cwiseAbs().maxCoeff() / hs, 1e-12);
    }
  }
}

TEST(NormalEquations, ZeroOutsideBandAndBorder) {
  const Window w = random_window(9, 30, 300);
  LinearSystem sys = allocate_for(w.fs, 12, 4, 0);
  fill_parallel(sys, w.fs, w.traj, w.bias);
  const NormalEquations ne = normal_equations(sys);
  const int nc = 6 * 12;
  for (int r = 0; r < nc; ++r) {
    for (int c = 0; c < nc; ++c) {
      if (std::abs(r / 6 - c / 6) >= 4) {
        EXPECT_EQ(ne.hessian(r, c), 0.0) << r << "," << c;
      }
    }
  }
}
