#include "ctlio/ape.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace ctlio;

namespace {

std::vector<io::StampedPose> line_track(int n, double dt, double t0 = 0.0) {
  std::vector<io::StampedPose> out;
  for (int k = 0; k < n; ++k) {
    const double t = t0 + k * dt;
    out.push_back({t, Pose(Rot3::exp(Vec3(0, 0, 0.1 * t)), Vec3(t, std::sin(t), 0.2 * t))});
  }
  return out;
}

}  // namespace

TEST(Ape, IdenticalTracksHaveZeroError) {
  const auto gt = line_track(100, 0.01);
  const ApeResult r = compute_ape(gt, gt);
  EXPECT_EQ(r.matched, 100u);
  EXPECT_EQ(r.rmse, 0.0);
  EXPECT_EQ(r.max, 0.0);
}

TEST(Ape, ConstantOffsetUnalignedAndAligned) {
  const auto gt = line_track(100, 0.01);
  auto est = gt;
  for (auto& s : est) s.pose.pos += Vec3(1, 0, 0);
  EXPECT_NEAR(compute_ape(est, gt).rmse, 1.0, 1e-12);
  ApeOptions opt;
  opt.align = true;
  EXPECT_NEAR(compute_ape(est, gt, opt).rmse, 0.0, 1e-9);
}

TEST(Ape, NearestStampWithinWindow) {
  const auto gt = line_track(11, 0.1);
  std::vector<io::StampedPose> est{{0.004, Pose()}, {0.051, Pose()}, {0.5, Pose()}, {1.2, Pose()}};
  const auto pairs = associate_stamps(est, gt, 0.01);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0], std::make_pair(std::size_t{0}, std::size_t{0}));
  EXPECT_EQ(pairs[1], std::make_pair(std::size_t{2}, std::size_t{5}));
}

TEST(Ape, NoOverlapThrows) {
  EXPECT_THROW(compute_ape(line_track(10, 0.1, 100.0), line_track(10, 0.1)), std::runtime_error);
}

// Reference values from an independent numpy implementation (SVD-based rigid
// alignment, unit scale) on the same closed-form fixture.
TEST(Ape, MatchesReferenceImplementation) {
  const int n = 50;
  const double yaw = 0.2;
  const Mat3 r = so3::exp(Vec3(0, 0, yaw));
  std::vector<io::StampedPose> gt, est;
  for (int k = 0; k < n; ++k) {
    const double t = k * 0.1;
    const Vec3 p(std::cos(0.3 * t) * 2, std::sin(0.5 * t), 0.1 * t);
    gt.push_back({t, Pose(Rot3(), p)});
    const Vec3 q = r * p + Vec3(0.5, -0.2, 0.1) + 0.01 * Vec3(std::sin(7 * t), std::cos(5 * t), std::sin(3 * t));
    est.push_back({t + 0.003, Pose(Rot3(), q)});
  }
  const ApeResult raw = compute_ape(est, gt);
  EXPECT_NEAR(raw.rmse, 0.37328055132946342, 1e-9);
  EXPECT_NEAR(raw.mean, 0.367685106044151, 1e-9);
  EXPECT_NEAR(raw.max, 0.51450154669184789, 1e-9);
  ApeOptions opt;
  opt.align = true;
  const ApeResult al = compute_ape(est, gt, opt);
  EXPECT_NEAR(al.rmse, 0.011857565094656523, 1e-9);
  EXPECT_NEAR(al.mean, 0.011480540909537523, 1e-9);
  EXPECT_NEAR(al.max, 0.017679836699064887, 1e-9);
}

TEST(Ape, UmeyamaRecoversRigidMotion) {
  const Pose g(Rot3::exp(Vec3(0.4, -0.3, 2.0)), Vec3(1, 2, 3));
  std::vector<Vec3> a, b;
  for (int k = 0; k < 20; ++k) {
    a.emplace_back(std::sin(k), std::cos(2 * k), 0.1 * k);
    b.push_back(g * a.back());
  }
  const Pose est = umeyama_rigid(a, b);
  EXPECT_LT((est.rot.matrix() - g.rot.matrix()).norm(), 1e-12);
  EXPECT_LT((est.pos - g.pos).norm(), 1e-12);
}
