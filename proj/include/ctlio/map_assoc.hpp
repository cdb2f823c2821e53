#pragma once

// Propagation, deskew and plane association against a keyframe point map.

#include "ctlio/factors.hpp"
#include "ctlio/kdtree.hpp"
#include "ctlio/parallel.hpp"
#include "ctlio/sensors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace ctlio {

struct PropagatedState {
  double t = 0.0;
  Pose pose;
  Vec3 vel = Vec3::Zero();
};

/// Strapdown states at t_a, at every IMU sample inside (t_a, t_end) and at t_end.
struct Propagation {
  std::vector<PropagatedState> states;
  bool fallback = false;  // no IMU samples: constant-velocity states

  double t_begin() const { return states.front().t; }
  double t_end() const { return states.back().t; }

  /// Pose at t by interpolating between neighbouring states (geodesic on rotation).
  Pose pose_at(double t) const {
    constexpr double slack = 1e-9;
    if (states.empty() || t < t_begin() - slack || t > t_end() + slack) {
      throw std::out_of_range("time " + std::to_string(t) + " outside propagated span");
    }
    auto it = std::upper_bound(states.begin(), states.end(), t,
                               [](double v, const PropagatedState& s) { return v < s.t; });
    if (it == states.begin()) return states.front().pose;
    if (it == states.end()) return states.back().pose;
    const PropagatedState& a = *(it - 1);
    const PropagatedState& b = *it;
    const double span = b.t - a.t;
    const double alpha = span > 0.0 ? (t - a.t) / span : 0.0;
    const Rot3 r = a.pose.rot.boxplus(alpha * a.pose.rot.boxminus(b.pose.rot));
    return Pose(r, a.pose.pos + alpha * (b.pose.pos - a.pose.pos));
  }
};

namespace detail {

/// Measurement at time t, linearly interpolated and held constant outside the samples.
inline ImuSample imu_at(const std::vector<ImuSample>& imu, double t) {
  if (t <= imu.front().t) return imu.front();
  if (t >= imu.back().t) return imu.back();
  auto it = std::upper_bound(imu.begin(), imu.end(), t, [](double v, const ImuSample& s) { return v < s.t; });
  const ImuSample& a = *(it - 1);
  const ImuSample& b = *it;
  const double alpha = (t - a.t) / (b.t - a.t);
  ImuSample out;
  out.t = t;
  out.gyro = a.gyro + alpha * (b.gyro - a.gyro);
  out.accel = a.accel + alpha * (b.accel - a.accel);
  return out;
}

}  // namespace detail

/// Midpoint strapdown integration from (pose0, vel0) at t_a to t_end:
/// R ← R·Exp(ω̄Δt), a = mean of R(ă − b_a) − g at both ends, p ← p + vΔt + ½aΔt², v ← v + aΔt.
inline Propagation propagate(const std::vector<ImuSample>& imu, double t_a, double t_end, const Pose& pose0,
                             const Vec3& vel0, const ImuBiases& bias, const GravityModel& grav = {}) {
  Propagation out;
  out.states.push_back({t_a, pose0, vel0});
  std::vector<double> times;
  for (const ImuSample& s : imu) {
    if (s.t > t_a && s.t < t_end) times.push_back(s.t);
  }
  times.push_back(t_end);
  if (imu.empty()) {
    out.fallback = true;
    for (double t : times) {
      PropagatedState s = out.states.back();
      s.pose.pos += s.vel * (t - s.t);
      s.t = t;
      out.states.push_back(s);
    }
    return out;
  }
  ImuSample m0 = detail::imu_at(imu, t_a);
  for (double t : times) {
    const PropagatedState& prev = out.states.back();
    const double dt = t - prev.t;
    const ImuSample m1 = detail::imu_at(imu, t);
    const Vec3 w = 0.5 * (m0.gyro + m1.gyro) - bias.gyro;
    PropagatedState next;
    next.t = t;
    next.pose.rot = prev.pose.rot.boxplus(w * dt);
    const Vec3 a0 = prev.pose.rot * (m0.accel - bias.accel) - grav.g_world;
    const Vec3 a1 = next.pose.rot * (m1.accel - bias.accel) - grav.g_world;
    const Vec3 a = 0.5 * (a0 + a1);
    next.pose.pos = prev.pose.pos + prev.vel * dt + 0.5 * a * dt * dt;
    next.vel = prev.vel + a * dt;
    out.states.push_back(next);
    m0 = m1;
  }
  return out;
}

/// World-frame points, each transformed by the pose at its own timestamp.
template <typename PoseAt>
std::vector<Vec3> deskew(const std::vector<LidarPoint>& pts, PoseAt&& pose_at, int threads = 1) {
  std::vector<Vec3> out(pts.size());
  parallel_for(pts.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) out[k] = pose_at(pts[k].t) * pts[k].p;
  });
  return out;
}

/// Anything that answers exact kNN queries over an indexed point set.
template <typename M>
concept MapBackend = requires(const M& m, const Vec3& q, int k, double r2, std::uint32_t i) {
  { m.knn(q, k, r2) } -> std::same_as<std::vector<Neighbor>>;
  { m.point(i) } -> std::convertible_to<const Vec3&>;
  { m.size() } -> std::convertible_to<std::size_t>;
};

/// Voxel-downsampled point store (first point per voxel wins) with a kd-tree
/// rebuilt after every insertion.
class VoxelKdMap {
 public:
  explicit VoxelKdMap(double voxel_size = 0.2) : voxel_(voxel_size) {}

  /// Returns the number of points actually added.
  std::size_t insert(const std::vector<Vec3>& pts) {
    std::vector<Vec3> all = tree_.points();
    const std::size_t before = all.size();
    for (const Vec3& p : pts) {
      if (!p.allFinite()) continue;
      if (occupied_.insert(key(p)).second) all.push_back(p);
    }
    const std::size_t added = all.size() - before;
    if (added > 0) tree_.build(std::move(all));
    return added;
  }

  std::vector<Neighbor> knn(const Vec3& q, int k, double max_sq_dist) const { return tree_.knn(q, k, max_sq_dist); }
  const Vec3& point(std::uint32_t i) const { return tree_.point(i); }
  std::size_t size() const { return tree_.size(); }
  double voxel_size() const { return voxel_; }

 private:
  std::uint64_t key(const Vec3& p) const {
    auto cell = [&](double v) {
      return static_cast<std::uint64_t>(static_cast<std::int64_t>(std::floor(v / voxel_)) + (1 << 20)) & 0x1FFFFF;
    };
    return cell(p.x()) | (cell(p.y()) << 21) | (cell(p.z()) << 42);
  }

  double voxel_;
  KdTree tree_;
  std::unordered_set<std::uint64_t> occupied_;
};

static_assert(MapBackend<VoxelKdMap>);

struct Keyframe {
  Pose pose;
  int bundle_index = 0;
};

struct KeyframeOptions {
  int neighbors = 5;     // K nearest keyframes (by translation)
  double trans = 1.0;    // θ_t, m
  double rot = 0.2;      // θ_r, rad
};

template <MapBackend Backend = VoxelKdMap>
struct PointMap {
  Backend backend;
  std::vector<Keyframe> keyframes;
};

/// Inserts `cloud_world` iff the candidate is novel: among the K keyframes
/// nearest in translation, the smallest translation exceeds θ_t or the
/// smallest rotation exceeds θ_r. An empty map always accepts.
template <typename Backend>
bool insert_keyframe(PointMap<Backend>& map, const Pose& pose, const std::vector<Vec3>& cloud_world,
                     const KeyframeOptions& opt = {}, int bundle_index = 0) {
  if (!map.keyframes.empty()) {
    std::vector<std::pair<double, double>> dist;  // (translation, rotation)
    dist.reserve(map.keyframes.size());
    for (const Keyframe& kf : map.keyframes) {
      dist.emplace_back((kf.pose.pos - pose.pos).norm(), kf.pose.rot.boxminus(pose.rot).norm());
    }
    const std::size_t k = std::min<std::size_t>(dist.size(), static_cast<std::size_t>(std::max(1, opt.neighbors)));
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    double min_t = std::numeric_limits<double>::infinity(), min_r = min_t;
    for (std::size_t i = 0; i < k; ++i) {
      min_t = std::min(min_t, dist[i].first);
      min_r = std::min(min_r, dist[i].second);
    }
    if (!(min_t > opt.trans || min_r > opt.rot)) return false;
  }
  map.keyframes.push_back({pose, bundle_index});
  map.backend.insert(cloud_world);
  return true;
}

struct PlaneFit {
  Vec3 normal = Vec3::UnitZ();
  double mu = 0.0;
  double quality = 0.0;  // 1 − λ_min/λ_mid of the scatter
  double spread = 0.0;   // max |nᵀq + μ| over the fitted points
};

/// Centroid + smallest eigenvector of the scatter. The normal's largest
/// component is made positive so the sign is reproducible.
inline PlaneFit fit_plane(const std::vector<Vec3>& pts) {
  PlaneFit out;
  if (pts.size() < 3) return out;
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  Mat3 scatter = Mat3::Zero();
  for (const Vec3& p : pts) scatter.noalias() += (p - c) * (p - c).transpose();
  scatter /= static_cast<double>(pts.size());
  const Eigen::SelfAdjointEigenSolver<Mat3> es(scatter);
  const Vec3 ev = es.eigenvalues();  // ascending
  Vec3 n = es.eigenvectors().col(0).normalized();
  int big = 0;
  n.cwiseAbs().maxCoeff(&big);
  if (n(big) < 0.0) n = -n;
  out.normal = n;
  out.mu = -n.dot(c);
  // Collinear neighbourhoods leave the normal undetermined.
  const bool spans_plane = ev(1) > 1e-10 * ev(2);
  out.quality = spans_plane ? std::clamp(1.0 - std::max(ev(0), 0.0) / ev(1), 0.0, 1.0) : 0.0;
  for (const Vec3& p : pts) out.spread = std::max(out.spread, std::abs(n.dot(p) + out.mu));
  return out;
}

struct AssocOptions {
  int k = 5;
  double max_neighbor_dist = 1.0;    // m, farthest of the k neighbours
  double min_quality = 0.7;
  double max_plane_spread = 0.1;     // m
  double max_point_residual = 0.5;   // m, |nᵀx + μ| of the query point itself
  int threads = 1;
};

struct Association {
  Vec3 f_body = Vec3::Zero();
  double t = 0.0;
  Vec3 normal = Vec3::UnitZ();
  double mu = 0.0;
  double quality = 0.0;
};

/// Plane association for each point; unassociable points are dropped. Output
/// order follows input order regardless of the thread count.
template <MapBackend Backend>
std::vector<Association> associate(const std::vector<LidarPoint>& body, const std::vector<Vec3>& world,
                                   const Backend& map, const AssocOptions& opt) {
  if (body.size() != world.size()) throw std::invalid_argument("associate: body/world size mismatch");
  std::vector<std::optional<Association>> slot(body.size());
  if (map.size() < static_cast<std::size_t>(std::max(3, opt.k))) return {};
  const double max_sq = opt.max_neighbor_dist * opt.max_neighbor_dist;
  parallel_for(body.size(), opt.threads, [&](std::size_t begin, std::size_t end) {
    std::vector<Vec3> nb;
    for (std::size_t i = begin; i < end; ++i) {
      const std::vector<Neighbor> hits = map.knn(world[i], opt.k, max_sq);
      if (static_cast<int>(hits.size()) < opt.k) continue;
      nb.clear();
      for (const Neighbor& h : hits) nb.push_back(map.point(h.index));
      const PlaneFit fit = fit_plane(nb);
      if (fit.quality < opt.min_quality || fit.spread > opt.max_plane_spread) continue;
      if (std::abs(fit.normal.dot(world[i]) + fit.mu) > opt.max_point_residual) continue;
      slot[i] = Association{body[i].p, body[i].t, fit.normal, fit.mu, fit.quality};
    }
  });
  std::vector<Association> out;
  for (auto& s : slot) {
    if (s) out.push_back(*s);
  }
  return out;
}

inline LidarFactor to_factor(const Association& a, double weight = 1.0) {
  return LidarFactor{a.f_body, a.t, a.normal, a.mu, weight};
}

}  // namespace ctlio
