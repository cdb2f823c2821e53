#pragma once

// Odometry driver: bundles → propagate/deskew/associate → inner loop → slide.

#include "ctlio/io.hpp"
#include "ctlio/map_assoc.hpp"
#include "ctlio/rng.hpp"
#include "ctlio/solver.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace ctlio {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PipelineConfig {
  double knot_length = 0.01;
  int spline_order = 4;
  int window_size = 3;
  int max_inner_iters = 3;
  int reassoc_clouds = 2;
  int max_lidar_factors = 8000;
  double sync_step = 0.1;

  double conv_tol = 1e-3;
  double cost_floor = 1e-14;
  double damping = 1e-9;  // trace is dominated by the stiff gyro rows; see solve_step
  double degeneracy_ratio = 1e-3;
  double huber_threshold = 0.2;
  double lidar_weight = 2500.0;  // 1/σ_r² for 2 cm range noise, on the same scale as the IMU weights

  double gyro_noise = 2e-3;
  double accel_noise = 2e-2;
  double gyro_bias_rw = 2e-5;
  double accel_bias_rw = 2e-4;

  int knn_k = 5;
  double max_neighbor_dist = 1.0;
  double plane_quality = 0.7;
  double max_plane_spread = 0.1;
  double max_point_residual = 0.5;
  double voxel_size = 0.2;

  double kf_trans = 1.0;
  double kf_rot = 0.2;
  int kf_neighbors = 5;

  int threads = 1;
  std::uint64_t seed = 1;

  struct Field {
    const char* key;
    const char* help;
    std::variant<double*, int*, std::uint64_t*> ptr;
  };

  std::vector<Field> fields() {
    return {
        {"knot_length", "spline knot spacing [s]", &knot_length},
        {"spline_order", "B-spline order N", &spline_order},
        {"window_size", "bundles in the sliding window", &window_size},
        {"max_inner_iters", "build-solve-update iterations per bundle", &max_inner_iters},
        {"reassoc_clouds", "newest bundles re-associated after each iteration", &reassoc_clouds},
        {"max_lidar_factors", "lidar factor cap per window", &max_lidar_factors},
        {"sync_step", "bundle length [s]", &sync_step},
        {"conv_tol", "relative cost decrease that counts as converged", &conv_tol},
        {"cost_floor", "per-factor cost that counts as converged", &cost_floor},
        {"damping", "diagonal damping relative to mean Hessian diagonal", &damping},
        {"degeneracy_ratio", "min lidar observability ratio before skipping the update", &degeneracy_ratio},
        {"huber_threshold", "Huber threshold on lidar residuals [m]; <= 0 disables", &huber_threshold},
        {"lidar_weight", "weight of each lidar factor", &lidar_weight},
        {"gyro_noise", "gyro noise std per sample [rad/s]", &gyro_noise},
        {"accel_noise", "accelerometer noise std per sample [m/s^2]", &accel_noise},
        {"gyro_bias_rw", "gyro bias random walk [rad/s/sqrt(s)]", &gyro_bias_rw},
        {"accel_bias_rw", "accelerometer bias random walk [m/s^2/sqrt(s)]", &accel_bias_rw},
        {"knn_k", "neighbours per plane fit", &knn_k},
        {"max_neighbor_dist", "farthest allowed neighbour [m]", &max_neighbor_dist},
        {"plane_quality", "min plane quality 1 - l_min/l_mid", &plane_quality},
        {"max_plane_spread", "max neighbour distance to the fitted plane [m]", &max_plane_spread},
        {"max_point_residual", "max query point distance to the plane [m]", &max_point_residual},
        {"voxel_size", "map voxel size [m]", &voxel_size},
        {"kf_trans", "keyframe translation threshold [m]", &kf_trans},
        {"kf_rot", "keyframe rotation threshold [rad]", &kf_rot},
        {"kf_neighbors", "keyframes compared against", &kf_neighbors},
        {"threads", "worker threads for deskew, association, fill and cost", &threads},
        {"seed", "seed of the lidar factor downsampling", &seed},
    };
  }

  void set(const std::string& key, const std::string& value) {
    for (Field& f : fields()) {
      if (key != f.key) continue;
      std::size_t used = 0;
      try {
        if (auto* d = std::get_if<double*>(&f.ptr)) {
          **d = std::stod(value, &used);
        } else if (auto* i = std::get_if<int*>(&f.ptr)) {
          **i = std::stoi(value, &used);
        } else {
          if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
          *std::get<std::uint64_t*>(f.ptr) = std::stoull(value, &used);
        }
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != value.size()) throw ConfigError("bad value '" + value + "' for key '" + key + "'");
      return;
    }
    throw ConfigError("unknown config key '" + key + "'");
  }

  void validate() const {
    auto positive = [](double v, const char* k) {
      if (!(v > 0.0)) throw ConfigError(std::string(k) + " must be positive");
    };
    positive(knot_length, "knot_length");
    positive(sync_step, "sync_step");
    positive(window_size, "window_size");
    positive(max_inner_iters, "max_inner_iters");
    positive(max_lidar_factors, "max_lidar_factors");
    positive(conv_tol, "conv_tol");
    positive(gyro_noise, "gyro_noise");
    positive(accel_noise, "accel_noise");
    positive(gyro_bias_rw, "gyro_bias_rw");
    positive(accel_bias_rw, "accel_bias_rw");
    positive(lidar_weight, "lidar_weight");
    positive(knn_k, "knn_k");
    positive(max_neighbor_dist, "max_neighbor_dist");
    positive(max_plane_spread, "max_plane_spread");
    positive(max_point_residual, "max_point_residual");
    positive(voxel_size, "voxel_size");
    positive(kf_trans, "kf_trans");
    positive(kf_rot, "kf_rot");
    positive(kf_neighbors, "kf_neighbors");
    positive(threads, "threads");
    if (spline_order < kMinOrder || spline_order > kMaxOrder) throw ConfigError("spline_order out of range");
    if (reassoc_clouds < 0 || reassoc_clouds > window_size) throw ConfigError("need 0 <= reassoc_clouds <= window_size");
    if (knn_k < 3) throw ConfigError("knn_k must be at least 3");
    if (plane_quality < 0.0 || plane_quality > 1.0) throw ConfigError("plane_quality must be in [0, 1]");
    if (cost_floor < 0.0 || damping < 0.0 || degeneracy_ratio < 0.0) {
      throw ConfigError("cost_floor, damping and degeneracy_ratio must be non-negative");
    }
  }

  /// Applies `key = value` text on top of the current values, then validates.
  void apply_text(std::string_view text) {
    try {
      for (const auto& [k, v] : io::parse_key_values(text)) set(k, v);
    } catch (const io::FormatError& e) {
      throw ConfigError(e.what());
    }
    validate();
  }

  std::string help() {
    std::ostringstream os;
    for (const Field& f : fields()) {
      os << "  " << f.key << " = ";
      std::visit([&](auto* p) { os << *p; }, f.ptr);
      os << "    # " << f.help << '\n';
    }
    return os.str();
  }
};

/// Splits time-sorted streams into bundles [t0 + k·step, t0 + (k+1)·step).
/// A sample exactly on a boundary belongs to the later bundle. A bundle is
/// flagged as a dropout when either stream was silent for more than two steps
/// before its first sample in that bundle.
inline std::vector<RawBundle> synchronize(const std::vector<ImuSample>& imu, const std::vector<LidarPoint>& points,
                                          double step, double t0) {
  if (!(step > 0.0)) throw std::invalid_argument("sync step must be positive");
  auto boundary = [&](long k) { return t0 + static_cast<double>(k) * step; };
  auto bundle_of = [&](double t) {
    long k = static_cast<long>(std::floor((t - t0) / step));
    while (t >= boundary(k + 1)) ++k;
    while (t < boundary(k)) --k;
    return k;
  };
  double t_last = t0;
  for (const auto& s : imu) t_last = std::max(t_last, s.t);
  for (const auto& p : points) t_last = std::max(t_last, p.t);
  const long n = (imu.empty() && points.empty()) ? 0 : bundle_of(t_last) + 1;
  std::vector<RawBundle> out(static_cast<std::size_t>(std::max(0L, n)));
  for (long k = 0; k < n; ++k) {
    RawBundle& b = out[static_cast<std::size_t>(k)];
    b.index = static_cast<int>(k);
    b.t_a = boundary(k);
    b.t_b = boundary(k + 1);
  }
  for (const auto& s : imu) {
    if (s.t < t0) continue;
    out[static_cast<std::size_t>(bundle_of(s.t))].imu.push_back(s);
  }
  for (const auto& p : points) {
    if (p.t < t0) continue;
    out[static_cast<std::size_t>(bundle_of(p.t))].points.push_back(p);
  }
  double last_imu = t0, last_pts = t0;
  for (RawBundle& b : out) {
    if (!b.imu.empty()) {
      if (b.imu.front().t - last_imu > 2.0 * step) b.dropout = true;
      last_imu = b.imu.back().t;
    }
    if (!b.points.empty()) {
      if (b.points.front().t - last_pts > 2.0 * step) b.dropout = true;
      last_pts = b.points.back().t;
    }
  }
  return out;
}

inline std::vector<LidarPoint> flatten(const std::vector<Scan>& scans) {
  std::vector<LidarPoint> out;
  for (const Scan& s : scans) out.insert(out.end(), s.points.begin(), s.points.end());
  return out;
}

struct LoopRecord {
  int loop_index = 0;
  int bundle_index = 0;
  double t = 0.0;  // bundle end time
  double t_outer = 0.0, t_pda = 0.0, t_bsu = 0.0, t_other = 0.0;
  double t_fill = 0.0, t_solve = 0.0;
  std::size_t num_lidar = 0, num_imu = 0, new_associations = 0;
  bool propagation_fallback = false;
  bool dropout = false;
  bool keyframe = false;
  SolveReport report;

  /// Relative decrease of the last iteration (1 when nothing ran).
  double last_relative_decrease() const {
    if (report.iters.empty()) return 1.0;
    const auto& r = report.iters.back();
    return r.cost_before > 0.0 ? (r.cost_before - r.cost_after) / r.cost_before : 0.0;
  }
  double per_factor_cost() const {
    const std::size_t n = num_lidar + num_imu;
    return n == 0 ? 0.0 : report.final_cost() / static_cast<double>(n);
  }
};

struct OdometryOutput {
  std::vector<io::StampedPose> poses;  // one per bundle, at the bundle end time
  SplineTrajectory spline;
  ImuBiases bias;
  std::vector<LoopRecord> loops;
  std::size_t keyframes = 0;
  std::size_t map_points = 0;
};

namespace detail {

/// Rotation taking the mean specific force of the first samples onto +z
/// (the sensor is assumed at rest), with zero yaw.
inline Rot3 gravity_aligned(const std::vector<ImuSample>& imu, std::size_t samples = 20) {
  Vec3 mean = Vec3::Zero();
  const std::size_t n = std::min(samples, imu.size());
  for (std::size_t k = 0; k < n; ++k) mean += imu[k].accel;
  if (n == 0 || mean.norm() == 0.0) return Rot3();
  return Rot3(Eigen::Quaterniond::FromTwoVectors(mean, Vec3::UnitZ()));
}

struct WindowBundle {
  const RawBundle* raw = nullptr;
  std::vector<Association> assoc;
};

}  // namespace detail

class Odometry {
 public:
  explicit Odometry(PipelineConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    map_.backend = VoxelKdMap(cfg_.voxel_size);
  }

  OdometryOutput run(const std::vector<ImuSample>& imu, const std::vector<LidarPoint>& points, double t0) {
    const std::vector<RawBundle> bundles = synchronize(imu, points, cfg_.sync_step, t0);
    if (static_cast<int>(bundles.size()) < cfg_.window_size) {
      throw std::invalid_argument("sequence has " + std::to_string(bundles.size()) + " bundles, fewer than window_size");
    }
    OdometryOutput out;
    bootstrap(bundles.front(), imu, out);
    for (std::size_t k = 1; k < bundles.size(); ++k) step(bundles[k], bundles[k - 1], out);
    out.spline = traj_;
    out.bias = bias_;
    out.keyframes = map_.keyframes.size();
    out.map_points = map_.backend.size();
    return out;
  }

  const PointMap<>& map() const { return map_; }

  /// Called after every solved window with the final factor set and state.
  std::function<void(const LoopRecord&, const FactorSet&, const SplineTrajectory&, const ImuBiases&)> on_window;

 private:
  using clock = std::chrono::steady_clock;

  AssocOptions assoc_options() const {
    AssocOptions o;
    o.k = cfg_.knn_k;
    o.max_neighbor_dist = cfg_.max_neighbor_dist;
    o.min_quality = cfg_.plane_quality;
    o.max_plane_spread = cfg_.max_plane_spread;
    o.max_point_residual = cfg_.max_point_residual;
    o.threads = cfg_.threads;
    return o;
  }

  KeyframeOptions keyframe_options() const { return {cfg_.kf_neighbors, cfg_.kf_trans, cfg_.kf_rot}; }

  void bootstrap(const RawBundle& b0, const std::vector<ImuSample>& imu, OdometryOutput& out) {
    const auto t_start = clock::now();
    const Pose start(detail::gravity_aligned(imu), Vec3::Zero());
    traj_ = SplineTrajectory(b0.t_a, cfg_.knot_length, cfg_.spline_order, start);
    traj_.extend_to(b0.t_b);
    const std::vector<Vec3> world = deskew(b0.points, [&](double t) { return traj_.pose_at(t); }, cfg_.threads);
    const bool kf = insert_keyframe(map_, start, world, keyframe_options(), b0.index);
    out.poses.push_back({b0.t_b, traj_.pose_at(b0.t_b)});
    LoopRecord rec;
    rec.bundle_index = b0.index;
    rec.t = b0.t_b;
    rec.keyframe = kf;
    rec.dropout = b0.dropout;
    rec.t_outer = detail::seconds_since(t_start);
    rec.t_other = rec.t_outer;
    out.loops.push_back(rec);
  }

  /// Pose for a new control point at time tau: the propagated pose inside the
  /// bundle, constant-rate extrapolation past its end.
  Pose initial_control(const Propagation& prop, const std::vector<ImuSample>& imu, double tau) const {
    if (tau <= prop.t_end()) return prop.pose_at(std::max(tau, prop.t_begin()));
    const PropagatedState& e = prop.states.back();
    const Vec3 w = imu.empty() ? Vec3::Zero() : Vec3(imu.back().gyro - bias_.gyro);
    const double d = tau - e.t;
    return Pose(e.pose.rot.boxplus(w * d), e.pose.pos + e.vel * d);
  }

  std::vector<LidarFactor> lidar_factors(int loop_index) const {
    std::vector<const Association*> all;
    for (const auto& wb : window_) {
      for (const auto& a : wb.assoc) all.push_back(&a);
    }
    std::vector<std::size_t> keep(all.size());
    std::iota(keep.begin(), keep.end(), 0);
    const auto cap = static_cast<std::size_t>(cfg_.max_lidar_factors);
    if (keep.size() > cap) {
      Rng rng(cfg_.seed, 0x10000u + static_cast<std::uint64_t>(loop_index));
      for (std::size_t i = 0; i < cap; ++i) std::swap(keep[i], keep[i + rng.below(keep.size() - i)]);
      keep.resize(cap);
      std::sort(keep.begin(), keep.end());
    }
    std::vector<LidarFactor> out;
    out.reserve(keep.size());
    for (std::size_t i : keep) out.push_back(to_factor(*all[i], cfg_.lidar_weight));
    return out;
  }

  std::vector<ImuFactor> imu_factors(double t_s, double t_e, const ImuBiases& prior) const {
    std::vector<ImuFactor> out;
    for (const auto& wb : window_) {
      for (const ImuSample& s : wb.raw->imu) {
        if (s.t >= t_s && s.t < t_e) out.push_back({s.t, s.gyro, s.accel, prior, ImuWeights{}});
      }
    }
    const double span = std::max(t_e - t_s, cfg_.sync_step);
    const double k = static_cast<double>(std::max<std::size_t>(out.size(), 1));
    ImuWeights w;
    w.gyro = 1.0 / (cfg_.gyro_noise * cfg_.gyro_noise);
    w.accel = 1.0 / (cfg_.accel_noise * cfg_.accel_noise);
    w.bias_gyro = 1.0 / (cfg_.gyro_bias_rw * cfg_.gyro_bias_rw * span * k);
    w.bias_accel = 1.0 / (cfg_.accel_bias_rw * cfg_.accel_bias_rw * span * k);
    for (auto& f : out) f.weights = w;
    return out;
  }

  void step(const RawBundle& b, const RawBundle& prev, OdometryOutput& out) {
    const auto t_start = clock::now();
    LoopRecord rec;
    rec.loop_index = static_cast<int>(out.loops.size());
    rec.bundle_index = b.index;
    rec.t = b.t_b;
    rec.dropout = b.dropout;

    // Propagate from the current estimate at t_a and seed the new controls.
    const Pose pose_a = traj_.pose_at(b.t_a);
    const Vec3 vel_a = traj_.vel_at(b.t_a);
    std::vector<ImuSample> imu = b.imu;
    if (!prev.imu.empty()) imu.insert(imu.begin(), prev.imu.back());
    const Propagation prop = propagate(imu, b.t_a, b.t_b, pose_a, vel_a, bias_, gravity_);
    rec.propagation_fallback = prop.fallback;
    const int old_last = traj_.last_index();
    traj_.extend_to(b.t_b);
    const double centre = 0.5 * (cfg_.spline_order - 2);
    for (int m = old_last + 1; m <= traj_.last_index(); ++m) {
      traj_.control(m) = initial_control(prop, imu, traj_.knot(0) + (m - centre) * cfg_.knot_length);
    }

    // Associate the new bundle using the propagated poses.
    auto t0 = clock::now();
    window_.push_back({&b, {}});
    {
      const std::vector<Vec3> world = deskew(b.points, [&](double t) { return prop.pose_at(t); }, cfg_.threads);
      window_.back().assoc = associate(b.points, world, map_.backend, assoc_options());
      rec.new_associations = window_.back().assoc.size();
    }
    rec.t_pda = detail::seconds_since(t0);

    const double t_s = window_.front().raw->t_a;
    const double t_e = b.t_b;
    FactorSet fs;
    fs.imu = imu_factors(t_s, t_e, bias_);
    fs.lidar = lidar_factors(rec.loop_index);

    WindowState st;
    st.traj = &traj_;
    st.first_ctrl = traj_.locate(t_s).first;
    st.num_ctrl = traj_.last_index() - st.first_ctrl + 1;
    st.bias = bias_;

    InnerLoopConfig icfg;
    icfg.max_iters = cfg_.max_inner_iters;
    icfg.conv_tol = cfg_.conv_tol;
    icfg.cost_floor = cfg_.cost_floor;
    icfg.damping = cfg_.damping;
    icfg.degeneracy_ratio = cfg_.degeneracy_ratio;
    icfg.threads = cfg_.threads;
    icfg.huber_threshold = cfg_.huber_threshold;
    icfg.gravity = gravity_;

    auto reassociate = [&](FactorSet& f) {
      const int m = std::min<int>(cfg_.reassoc_clouds, static_cast<int>(window_.size()));
      if (m == 0) return;
      for (std::size_t k = window_.size() - static_cast<std::size_t>(m); k < window_.size(); ++k) {
        auto& wb = window_[k];
        const std::vector<Vec3> world =
            deskew(wb.raw->points, [&](double t) { return traj_.pose_at(t); }, cfg_.threads);
        wb.assoc = associate(wb.raw->points, world, map_.backend, assoc_options());
      }
      f.lidar = lidar_factors(rec.loop_index);
    };

    if (fs.imu.empty()) {
      rec.report.degenerate = true;
    } else {
      rec.num_imu = fs.imu.size();
      rec.num_lidar = fs.lidar.size();
      rec.report = inner_loop(st, fs, icfg, reassociate);
      bias_ = st.bias;
      if (on_window) on_window(rec, fs, traj_, bias_);
    }
    for (const auto& it : rec.report.iters) {
      rec.t_fill += it.t_fill;
      rec.t_solve += it.t_solve;
      rec.t_bsu += it.t_build + it.t_fill + it.t_solve + it.t_update + it.t_cost;
      rec.t_pda += it.t_reassoc;
    }

    // Slide: the oldest bundle leaves the window and may become a keyframe.
    if (static_cast<int>(window_.size()) >= cfg_.window_size) {
      const RawBundle* old = window_.front().raw;
      const std::vector<Vec3> world =
          deskew(old->points, [&](double t) { return traj_.pose_at(t); }, cfg_.threads);
      rec.keyframe = insert_keyframe(map_, traj_.pose_at(old->t_b), world, keyframe_options(), old->index);
      window_.pop_front();
    }

    out.poses.push_back({b.t_b, traj_.pose_at(b.t_b)});
    rec.t_outer = detail::seconds_since(t_start);
    rec.t_other = std::max(0.0, rec.t_outer - rec.t_pda - rec.t_bsu);
    out.loops.push_back(std::move(rec));
  }

  PipelineConfig cfg_;
  GravityModel gravity_;
  SplineTrajectory traj_;
  ImuBiases bias_;
  PointMap<> map_;
  std::deque<detail::WindowBundle> window_;
};

inline OdometryOutput run_odometry(const PipelineConfig& cfg, const std::vector<ImuSample>& imu,
                                   const std::vector<Scan>& scans) {
  const double t0 = !scans.empty() ? scans.front().t_start : (imu.empty() ? 0.0 : imu.front().t);
  Odometry odo(cfg);
  return odo.run(imu, flatten(scans), t0);
}

}  // namespace ctlio
