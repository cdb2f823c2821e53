#include "ctlio/ape.hpp"
#include "ctlio/pipeline.hpp"
#include "ctlio/worldsim.hpp"

#include <gtest/gtest.h>

#include <cstring>

using namespace ctlio;

namespace {

std::vector<ImuSample> imu_at(std::initializer_list<double> ts) {
  std::vector<ImuSample> out;
  for (double t : ts) out.push_back({t, Vec3::Zero(), Vec3(0, 0, 9.81)});
  return out;
}

std::vector<LidarPoint> points_at(std::initializer_list<double> ts) {
  std::vector<LidarPoint> out;
  for (double t : ts) out.push_back({t, Vec3(1, 0, 0)});
  return out;
}

std::vector<io::StampedPose> truth_track(const SimData& d) {
  std::vector<io::StampedPose> gt;
  for (const auto& s : d.ground_truth) gt.push_back({s.t, s.pose});
  return gt;
}

// Gates matched to a noiseless sensor: only exactly planar neighbourhoods.
PipelineConfig zero_noise_config() {
  PipelineConfig cfg;
  cfg.apply_text("max_plane_spread = 1e-6\nmax_point_residual = 1e-6\n");
  return cfg;
}

SimData short_sequence(const std::string& preset, double duration, bool noise_free, std::uint64_t seed) {
  Scenario sc = make_preset(preset, noise_free);
  sc.duration = duration;
  return simulate(sc, seed);
}

template <class T>
bool bit_equal(const T& a, const T& b) {
  return std::memcmp(&a, &b, sizeof(T)) == 0;
}

}  // namespace

TEST(Synchronize, BoundarySampleGoesToLaterBundle) {
  const auto bundles = synchronize(imu_at({0.0, 0.05, 0.1, 0.15}), points_at({0.099, 0.1, 0.2}), 0.1, 0.0);
  ASSERT_EQ(bundles.size(), 3u);
  EXPECT_EQ(bundles[0].imu.size(), 2u);
  EXPECT_EQ(bundles[1].imu.size(), 2u);
  EXPECT_EQ(bundles[1].imu.front().t, 0.1);
  EXPECT_EQ(bundles[0].points.size(), 1u);
  EXPECT_EQ(bundles[1].points.size(), 1u);
  EXPECT_EQ(bundles[2].points.front().t, 0.2);
  EXPECT_DOUBLE_EQ(bundles[2].t_a, 0.2);
  EXPECT_DOUBLE_EQ(bundles[2].t_b, 0.30000000000000004);
}

TEST(Synchronize, ConservesSamplesAfterStart) {
  std::vector<ImuSample> imu;
  std::vector<LidarPoint> pts;
  for (int k = 0; k < 400; ++k) imu.push_back({k * 0.0025, Vec3::Zero(), Vec3::Zero()});
  for (int k = 0; k < 1000; ++k) pts.push_back({k * 0.001, Vec3::Zero()});
  const auto bundles = synchronize(imu, pts, 0.1, 0.0);
  std::size_t ni = 0, np = 0;
  for (const auto& b : bundles) {
    ni += b.imu.size();
    np += b.points.size();
    for (const auto& s : b.imu) EXPECT_TRUE(s.t >= b.t_a && s.t < b.t_b);
    for (const auto& p : b.points) EXPECT_TRUE(p.t >= b.t_a && p.t < b.t_b);
  }
  EXPECT_EQ(ni, imu.size());
  EXPECT_EQ(np, pts.size());
  // Samples before t0 are dropped.
  const auto late = synchronize(imu, pts, 0.1, 0.5);
  std::size_t kept = 0;
  for (const auto& b : late) kept += b.imu.size();
  EXPECT_EQ(kept, 200u);
}

TEST(Synchronize, GapMarksDropout) {
  const auto bundles = synchronize(imu_at({0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45}),
                                   points_at({0.01, 0.11, 0.45}), 0.1, 0.0);
  ASSERT_EQ(bundles.size(), 5u);
  for (int k = 0; k < 4; ++k) EXPECT_FALSE(bundles[static_cast<std::size_t>(k)].dropout) << k;
  EXPECT_TRUE(bundles[4].dropout);
}

TEST(Synchronize, EmptyLidarStillYieldsBundles) {
  const auto bundles = synchronize(imu_at({0.0, 0.1, 0.2}), {}, 0.1, 0.0);
  ASSERT_EQ(bundles.size(), 3u);
  for (const auto& b : bundles) EXPECT_TRUE(b.points.empty());
  EXPECT_TRUE(synchronize({}, {}, 0.1, 0.0).empty());
  EXPECT_THROW(synchronize({}, {}, 0.0, 0.0), std::invalid_argument);
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
  PipelineConfig cfg;
  EXPECT_THROW(cfg.set("no_such_key", "1"), ConfigError);
  EXPECT_THROW(cfg.set("knot_length", "0.01x"), ConfigError);
  EXPECT_THROW(cfg.set("window_size", "2.5"), ConfigError);
  EXPECT_THROW(cfg.set("seed", "-3"), ConfigError);
  EXPECT_THROW(cfg.apply_text("threads 4\n"), ConfigError);
  cfg.apply_text("threads = 4\nseed = 99\n");
  EXPECT_EQ(cfg.threads, 4);
  EXPECT_EQ(cfg.seed, 99u);
  EXPECT_NE(cfg.help().find("reassoc_clouds = 2"), std::string::npos);
}

TEST(Config, ValidationCatchesInconsistentValues) {
  auto rejects = [](const std::string& text) {
    PipelineConfig cfg;
    EXPECT_THROW(cfg.apply_text(text), ConfigError) << text;
  };
  rejects("reassoc_clouds = 4\n");
  rejects("spline_order = 1\n");
  rejects("knn_k = 2\n");
  rejects("plane_quality = 1.5\n");
  rejects("knot_length = 0\n");
  rejects("damping = -1\n");
  PipelineConfig ok;
  EXPECT_NO_THROW(ok.validate());
}

TEST(Odometry, TooShortSequenceIsAnError) {
  PipelineConfig cfg;
  EXPECT_THROW(Odometry(cfg).run(imu_at({0.0, 0.05, 0.1}), {}, 0.0), std::invalid_argument);
}

TEST(Odometry, ZeroNoiseShortRunIsExact) {
  const SimData d = short_sequence("room_slow", 3.0, true, 3);
  Odometry odo(zero_noise_config());
  const Scenario sc = make_preset("room_slow", true);
  double worst_truth_cost = 0.0;
  odo.on_window = [&](const LoopRecord&, const FactorSet& fs, const SplineTrajectory&, const ImuBiases&) {
    // The factors built from data must be satisfied by the true trajectory.
    const double n = static_cast<double>(fs.imu.size() + fs.lidar.size());
    worst_truth_cost = std::max(worst_truth_cost, evaluate_cost(fs, sc.truth, ImuBiases{}, {}) / n);
  };
  const OdometryOutput out = odo.run(d.imu, flatten(d.scans), 0.0);
  ASSERT_EQ(out.poses.size(), 30u);
  EXPECT_LT(compute_ape(out.poses, truth_track(d)).rmse, 1e-6);
  EXPECT_LT(worst_truth_cost, 1e-12);
  for (const auto& l : out.loops) {
    if (l.loop_index == 0) continue;
    EXPECT_FALSE(l.report.degenerate) << l.loop_index;
    EXPECT_LT(l.per_factor_cost(), 1e-12) << l.loop_index;
  }
  EXPECT_LT(out.bias.gyro.norm(), 1e-6);
  EXPECT_LT(out.bias.accel.norm(), 1e-4);
}

TEST(Odometry, WindowBookkeeping) {
  const SimData d = short_sequence("room_slow", 1.5, false, 5);
  PipelineConfig cfg;
  cfg.max_lidar_factors = 500;
  Odometry odo(cfg);
  int windows = 0;
  odo.on_window = [&](const LoopRecord& rec, const FactorSet& fs, const SplineTrajectory& traj, const ImuBiases&) {
    ++windows;
    const int bundles = std::min(rec.loop_index, cfg.window_size);
    const double t_s = rec.t - bundles * cfg.sync_step;
    EXPECT_EQ(fs.lidar.size(), 500u);
    EXPECT_EQ(rec.num_lidar, fs.lidar.size());
    EXPECT_EQ(rec.num_imu, fs.imu.size());
    EXPECT_NEAR(static_cast<double>(fs.imu.size()), 40.0 * bundles, 1.0);
    for (const auto& f : fs.imu) EXPECT_TRUE(f.t >= t_s - 1e-9 && f.t < rec.t);
    for (const auto& f : fs.lidar) EXPECT_TRUE(f.t >= t_s - 1e-9 && f.t < rec.t);
    EXPECT_GE(traj.t_end(), rec.t - 1e-9);
  };
  const OdometryOutput out = odo.run(d.imu, flatten(d.scans), 0.0);
  EXPECT_EQ(windows, 14);
  ASSERT_EQ(out.loops.size(), 15u);
  EXPECT_TRUE(out.loops[0].keyframe);
  EXPECT_GE(out.keyframes, 1u);
  for (const auto& l : out.loops) {
    EXPECT_GE(l.t_outer, 0.0);
    EXPECT_NEAR(l.t_outer, l.t_pda + l.t_bsu + l.t_other, 1e-9 + 1e-6 * l.t_outer);
    EXPECT_LE(l.report.iterations, cfg.max_inner_iters);
  }
}

TEST(Odometry, BitwiseIdenticalAcrossThreadCounts) {
  const SimData d = short_sequence("room_dynamic", 1.5, false, 11);
  std::vector<OdometryOutput> outs;
  std::vector<std::vector<double>> costs;
  for (int threads : {1, 4, 8}) {
    PipelineConfig cfg;
    cfg.threads = threads;
    Odometry odo(cfg);
    costs.emplace_back();
    odo.on_window = [&](const LoopRecord&, const FactorSet& fs, const SplineTrajectory& traj, const ImuBiases& b) {
      for (double c : factor_costs(fs, traj, b, {})) costs.back().push_back(c);
    };
    outs.push_back(odo.run(d.imu, flatten(d.scans), 0.0));
  }
  for (std::size_t k = 1; k < outs.size(); ++k) {
    ASSERT_EQ(outs[k].poses.size(), outs[0].poses.size());
    for (std::size_t i = 0; i < outs[0].poses.size(); ++i) {
      EXPECT_TRUE(bit_equal(outs[k].poses[i].pose.pos, outs[0].poses[i].pose.pos)) << i;
      const Mat3 ra = outs[k].poses[i].pose.rot.matrix(), rb = outs[0].poses[i].pose.rot.matrix();
      EXPECT_TRUE(bit_equal(ra, rb));
    }
    ASSERT_EQ(outs[k].spline.num_control(), outs[0].spline.num_control());
    for (int m = 0; m < outs[0].spline.num_control(); ++m) {
      EXPECT_TRUE(bit_equal(outs[k].spline.control(m).pos, outs[0].spline.control(m).pos)) << m;
    }
    EXPECT_TRUE(bit_equal(outs[k].bias.gyro, outs[0].bias.gyro));
    EXPECT_TRUE(bit_equal(outs[k].bias.accel, outs[0].bias.accel));
    EXPECT_EQ(outs[k].map_points, outs[0].map_points);
    EXPECT_EQ(costs[k], costs[0]);
  }
}
