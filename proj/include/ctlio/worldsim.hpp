#pragma once

// Deterministic synthetic sequences: planar world, smooth truth trajectory,
// motion-distorted spinning-lidar scans and a biased, noisy IMU.

#include "ctlio/bspline.hpp"
#include "ctlio/factors.hpp"
#include "ctlio/rng.hpp"
#include "ctlio/sensors.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctlio {

/// Rectangle corner + u·a + v·b with a, b ∈ [0, 1]; u ⟂ v.
struct Patch {
  Vec3 corner = Vec3::Zero();
  Vec3 u = Vec3::UnitX();
  Vec3 v = Vec3::UnitY();

  Vec3 normal() const { return u.cross(v).normalized(); }
  double area() const { return u.cross(v).norm(); }
  double distance(const Vec3& x) const { return std::abs(normal().dot(x - corner)); }
};

struct World {
  std::vector<Patch> patches;

  void add_box(const Vec3& lo, const Vec3& hi) {
    const Vec3 d = hi - lo;
    const Vec3 ex(d.x(), 0, 0), ey(0, d.y(), 0), ez(0, 0, d.z());
    patches.push_back({lo, ey, ex});  // bottom
    patches.push_back({lo + ez, ex, ey});
    patches.push_back({lo, ex, ez});
    patches.push_back({lo + ey, ez, ex});
    patches.push_back({lo, ez, ey});
    patches.push_back({lo + ex, ey, ez});
  }
};

struct RayHit {
  double range = std::numeric_limits<double>::infinity();
  int patch = -1;
};

/// Nearest patch hit by the ray o + s·d, s > 0 (d unit).
inline RayHit cast_ray(const World& w, const Vec3& o, const Vec3& d) {
  RayHit best;
  for (int k = 0; k < static_cast<int>(w.patches.size()); ++k) {
    const Patch& p = w.patches[static_cast<std::size_t>(k)];
    const Vec3 n = p.u.cross(p.v);
    const double denom = n.dot(d);
    if (std::abs(denom) < 1e-12 * n.norm()) continue;
    const double s = n.dot(p.corner - o) / denom;
    if (!(s > 0.0) || s >= best.range) continue;
    const Vec3 x = o + s * d - p.corner;
    const double a = x.dot(p.u) / p.u.squaredNorm();
    const double b = x.dot(p.v) / p.v.squaredNorm();
    if (a < 0.0 || a > 1.0 || b < 0.0 || b > 1.0) continue;
    best = {s, k};
  }
  return best;
}

struct LidarModel {
  int channels = 16;
  double fov_up_deg = 25.0;
  double fov_down_deg = -25.0;
  double azimuth_step_deg = 2.0;
  double period = 0.1;  // one revolution per scan
  double sigma_range = 0.02;
  double min_range = 0.3;
  double max_range = 50.0;

  int columns() const { return static_cast<int>(std::lround(360.0 / azimuth_step_deg)); }
  Vec3 direction(int channel, int column) const {
    const double el = (channels == 1 ? 0.0
                                     : fov_down_deg + (fov_up_deg - fov_down_deg) * channel / (channels - 1)) *
                      std::numbers::pi / 180.0;
    const double az = 2.0 * std::numbers::pi * column / columns();
    return Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
  }
};

struct ImuModel {
  double rate = 400.0;
  double sigma_gyro = 2e-3;    // rad/s per sample
  double sigma_accel = 2e-2;   // m/s² per sample
  double bias_rw_gyro = 2e-5;  // rad/s/√s
  double bias_rw_accel = 2e-4; // m/s²/√s
  Vec3 bias_gyro0 = Vec3(2e-3, -1e-3, 1.5e-3);
  Vec3 bias_accel0 = Vec3(2e-2, -3e-2, 1e-2);
};

/// Smooth truth profile: per-axis sinusoids (rotation vector and position)
/// faded in over `ramp` seconds after `rest` seconds at rest, plus a forward drift.
struct MotionProfile {
  struct Wave {
    double amp = 0.0, freq = 0.0, phase = 0.0;  // freq in Hz
  };
  std::array<Wave, 3> rot{};
  std::array<Wave, 3> pos{};
  Vec3 drift = Vec3::Zero();  // steady-state velocity
  double rest = 0.3;          // stationary lead-in
  double ramp = 1.0;

  /// Quintic smoothstep: zero value, slope and curvature at 0; one at ramp.
  double envelope(double t) const {
    t -= rest;
    if (t <= 0.0) return 0.0;
    if (t >= ramp) return 1.0;
    const double x = t / ramp;
    return x * x * x * (10.0 - 15.0 * x + 6.0 * x * x);
  }
  /// ∫₀ᵗ envelope.
  double envelope_integral(double t) const {
    t -= rest;
    if (t <= 0.0) return 0.0;
    if (t >= ramp) return 0.5 * ramp + (t - ramp);
    const double x = t / ramp;
    return ramp * x * x * x * x * (2.5 - 3.0 * x + x * x);
  }

  Pose at(double t) const {
    const double e = envelope(t);
    Vec3 phi, p;
    for (int k = 0; k < 3; ++k) {
      const Wave& r = rot[static_cast<std::size_t>(k)];
      const Wave& q = pos[static_cast<std::size_t>(k)];
      phi(k) = e * r.amp * std::sin(2.0 * std::numbers::pi * r.freq * t + r.phase);
      p(k) = e * q.amp * std::sin(2.0 * std::numbers::pi * q.freq * t + q.phase);
    }
    return Pose(Rot3::exp(phi), p + drift * envelope_integral(t));
  }
};

/// Truth as a spline on the given knot grid. Control m samples the profile at
/// the knot its basis function is centred on, and the whole spline is moved so
/// that the pose at t0 is exactly the identity.
inline SplineTrajectory truth_spline(const MotionProfile& prof, double duration, double knot, int order) {
  SplineTrajectory probe(0.0, knot, order, Pose());
  const int n = probe.required_controls(duration + 0.5);
  const double centre = 0.5 * (order - 2);
  std::vector<Pose> ctrl;
  ctrl.reserve(static_cast<std::size_t>(n));
  for (int m = 0; m < n; ++m) ctrl.push_back(prof.at((m - centre) * knot));
  SplineTrajectory s(0.0, knot, order, ctrl);
  const Pose inv0 = s.pose_at(0.0).inverse();
  for (auto& c : ctrl) c = inv0 * c;
  return SplineTrajectory(0.0, knot, order, std::move(ctrl));
}

struct Scenario {
  std::string name;
  double duration = 0.0;
  World world;
  SplineTrajectory truth;
  LidarModel lidar;
  ImuModel imu;
  GravityModel gravity;
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"room_slow", "room_dynamic", "corridor_degenerate"};
  return names;
}

namespace detail {

/// Box room around the start pose with a few obstacles; floor at z = −1.5.
inline World room_world() {
  World w;
  const Vec3 lo(-8.0, -6.0, -1.5), hi(8.0, 6.0, 2.5);
  const Vec3 d = hi - lo;
  // Inward-facing walls.
  w.patches.push_back({lo, Vec3(d.x(), 0, 0), Vec3(0, d.y(), 0)});
  w.patches.push_back({Vec3(lo.x(), lo.y(), hi.z()), Vec3(0, d.y(), 0), Vec3(d.x(), 0, 0)});
  w.patches.push_back({lo, Vec3(0, 0, d.z()), Vec3(d.x(), 0, 0)});
  w.patches.push_back({Vec3(lo.x(), hi.y(), lo.z()), Vec3(d.x(), 0, 0), Vec3(0, 0, d.z())});
  w.patches.push_back({lo, Vec3(0, d.y(), 0), Vec3(0, 0, d.z())});
  w.patches.push_back({Vec3(hi.x(), lo.y(), lo.z()), Vec3(0, 0, d.z()), Vec3(0, d.y(), 0)});
  w.add_box(Vec3(4.0, 2.5, -1.5), Vec3(4.8, 3.3, 2.5));
  w.add_box(Vec3(-5.0, -4.0, -1.5), Vec3(-4.2, -3.2, 2.5));
  w.add_box(Vec3(-3.5, 3.0, -1.5), Vec3(-1.5, 4.5, -0.7));
  w.add_box(Vec3(5.0, -4.5, -1.5), Vec3(6.5, -3.5, 0.0));
  // Slanted panel leaning on the +x wall.
  w.patches.push_back({Vec3(7.0, -1.0, -1.5), Vec3(0, 2.0, 0), Vec3(0.9, 0, 2.5)});
  return w;
}

inline World corridor_world() {
  World w;
  w.patches.push_back({Vec3(-1.5, -50, -3), Vec3(0, 0, 6), Vec3(0, 100, 0)});
  w.patches.push_back({Vec3(1.5, -50, -3), Vec3(0, 100, 0), Vec3(0, 0, 6)});
  return w;
}

}  // namespace detail

/// Named scenario. Throws std::invalid_argument for an unknown name.
/// `noise_free` zeroes range noise, IMU noise, bias random walk and initial biases.
inline Scenario make_preset(const std::string& name, bool noise_free = false, double knot = 0.01, int order = 4) {
  Scenario sc;
  sc.name = name;
  MotionProfile prof;
  using W = MotionProfile::Wave;
  if (name == "room_slow") {
    sc.duration = 30.0;
    sc.world = detail::room_world();
    prof.ramp = 2.0;
    prof.rot = {W{0.08, 0.07, 0.0}, W{0.06, 0.05, 1.0}, W{0.9, 0.04, 0.0}};
    prof.pos = {W{1.5, 0.05, 0.0}, W{1.0, 0.07, 0.5}, W{0.2, 0.1, 0.0}};
  } else if (name == "room_dynamic") {
    sc.duration = 10.0;
    sc.world = detail::room_world();
    prof.ramp = 1.0;
    prof.rot = {W{0.25, 0.6, 0.3}, W{0.2, 0.7, 1.1}, W{0.9, 0.48, 0.0}};
    prof.pos = {W{1.6, 0.3, 0.0}, W{1.2, 0.28, 0.7}, W{0.3, 0.5, 0.2}};
  } else if (name == "corridor_degenerate") {
    sc.duration = 12.0;
    sc.world = detail::corridor_world();
    prof.ramp = 2.0;
    prof.rot = {W{0.03, 0.2, 0.0}, W{0.03, 0.25, 0.5}, W{0.1, 0.15, 0.0}};
    prof.pos = {W{0.2, 0.2, 0.0}, W{0.0, 0.0, 0.0}, W{0.1, 0.3, 0.0}};
    prof.drift = Vec3(0.0, 1.0, 0.0);
  } else {
    throw std::invalid_argument("unknown preset '" + name + "'");
  }
  sc.truth = truth_spline(prof, sc.duration, knot, order);
  if (noise_free) {
    sc.lidar.sigma_range = 0.0;
    sc.imu.sigma_gyro = sc.imu.sigma_accel = 0.0;
    sc.imu.bias_rw_gyro = sc.imu.bias_rw_accel = 0.0;
    sc.imu.bias_gyro0.setZero();
    sc.imu.bias_accel0.setZero();
  }
  return sc;
}

enum : std::uint64_t { kStreamImuNoise = 1, kStreamImuBias = 2, kStreamLidar = 3 };

/// IMU samples at k/rate for t in [t_begin, t_end).
inline std::vector<ImuSample> gen_imu(const SplineTrajectory& truth, const ImuModel& m, const GravityModel& g,
                                      double t_begin, double t_end, std::uint64_t seed) {
  Rng noise(seed, kStreamImuNoise), walk(seed, kStreamImuBias);
  std::vector<ImuSample> out;
  Vec3 bg = m.bias_gyro0, ba = m.bias_accel0;
  const double dt = 1.0 / m.rate;
  const auto k0 = static_cast<long>(std::ceil(t_begin * m.rate - 1e-9));
  for (long k = k0;; ++k) {
    const double t = static_cast<double>(k) / m.rate;
    if (t >= t_end) break;
    const Pose x = truth.pose_at(t);
    ImuSample s;
    s.t = t;
    s.gyro = truth.angvel_at(t) + bg + noise.normal3(m.sigma_gyro);
    s.accel = x.rot.matrix().transpose() * (truth.accel_at(t) + g.g_world) + ba + noise.normal3(m.sigma_accel);
    out.push_back(s);
    bg += walk.normal3(m.bias_rw_gyro * std::sqrt(dt));
    ba += walk.normal3(m.bias_rw_accel * std::sqrt(dt));
  }
  return out;
}

struct SimPoint {
  double t = 0.0;
  Vec3 p = Vec3::Zero();  // body frame at t
  int patch = -1;
};

/// One revolution over [t_start, t_start + period): column j fires at
/// t_start + j·period/columns, all channels at once.
inline std::vector<SimPoint> gen_scan(const SplineTrajectory& truth, const World& world, const LidarModel& m,
                                      double t_start, Rng& rng) {
  std::vector<SimPoint> out;
  const int cols = m.columns();
  for (int j = 0; j < cols; ++j) {
    const double t = t_start + m.period * j / cols;
    const Pose x = truth.pose_at(t);
    for (int c = 0; c < m.channels; ++c) {
      const Vec3 d = m.direction(c, j);
      const RayHit hit = cast_ray(world, x.pos, x.rot * d);
      const double noise = rng.normal(m.sigma_range);
      if (hit.patch < 0 || hit.range < m.min_range || hit.range > m.max_range) continue;
      out.push_back({t, (hit.range + noise) * d, hit.patch});
    }
  }
  return out;
}

struct TruthSample {
  double t = 0.0;
  Pose pose;
};

struct SimData {
  std::vector<ImuSample> imu;
  std::vector<Scan> scans;
  std::vector<TruthSample> ground_truth;  // 100 Hz
};

inline SimData simulate(const Scenario& sc, std::uint64_t seed) {
  SimData d;
  d.imu = gen_imu(sc.truth, sc.imu, sc.gravity, 0.0, sc.duration, seed);
  Rng rng(seed, kStreamLidar);
  const int n_scans = static_cast<int>(std::floor(sc.duration / sc.lidar.period + 1e-9));
  for (int k = 0; k < n_scans; ++k) {
    Scan s;
    s.index = k;
    s.t_start = k * sc.lidar.period;
    s.t_end = (k + 1) * sc.lidar.period;
    for (const SimPoint& p : gen_scan(sc.truth, sc.world, sc.lidar, s.t_start, rng)) s.points.push_back({p.t, p.p});
    d.scans.push_back(std::move(s));
  }
  const auto n_gt = static_cast<int>(std::floor(sc.duration * 100.0 + 1e-9));
  for (int k = 0; k <= n_gt; ++k) {
    const double t = k / 100.0;
    d.ground_truth.push_back({t, sc.truth.pose_at(t)});
  }
  return d;
}

}  // namespace ctlio
