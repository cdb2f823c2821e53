#pragma once

// Absolute position error between an estimate and ground truth.

#include "ctlio/io.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <vector>

namespace ctlio {

struct ApeOptions {
  double max_dt = 0.01;  // s, nearest-timestamp association window
  bool align = false;    // rigid (rotation + translation, no scale) alignment first
};

struct ApeResult {
  std::size_t matched = 0;
  double rmse = 0.0;
  double mean = 0.0;
  double max = 0.0;
  Pose alignment;  // applied to the estimate
};

/// Index pairs (estimate, truth): each estimate sample takes the truth sample
/// nearest in time (earlier one on ties), kept if within max_dt.
inline std::vector<std::pair<std::size_t, std::size_t>> associate_stamps(const std::vector<io::StampedPose>& est,
                                                                         const std::vector<io::StampedPose>& gt,
                                                                         double max_dt) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (gt.empty()) return out;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double t = est[i].t;
    auto it = std::lower_bound(gt.begin(), gt.end(), t, [](const io::StampedPose& s, double v) { return s.t < v; });
    std::size_t best = static_cast<std::size_t>(it - gt.begin());
    if (best == gt.size()) {
      best -= 1;
    } else if (best > 0 && t - gt[best - 1].t <= gt[best].t - t) {
      best -= 1;
    }
    if (std::abs(gt[best].t - t) <= max_dt) out.emplace_back(i, best);
  }
  return out;
}

/// Rotation R and translation p minimising Σ|R·a_k + p − b_k|² (Umeyama, unit scale).
inline Pose umeyama_rigid(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  const auto n = static_cast<double>(a.size());
  Vec3 ca = Vec3::Zero(), cb = Vec3::Zero();
  for (std::size_t k = 0; k < a.size(); ++k) {
    ca += a[k];
    cb += b[k];
  }
  ca /= n;
  cb /= n;
  Mat3 cov = Mat3::Zero();
  for (std::size_t k = 0; k < a.size(); ++k) cov += (b[k] - cb) * (a[k] - ca).transpose();
  cov /= n;
  const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 s = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2, 2) = -1.0;
  const Mat3 r = svd.matrixU() * s * svd.matrixV().transpose();
  return Pose(Rot3::from_orthonormal(r), cb - r * ca);
}

/// Throws std::runtime_error when no timestamps overlap.
inline ApeResult compute_ape(const std::vector<io::StampedPose>& est, const std::vector<io::StampedPose>& gt,
                             const ApeOptions& opt = {}) {
  const auto pairs = associate_stamps(est, gt, opt.max_dt);
  if (pairs.empty()) throw std::runtime_error("no overlapping timestamps between estimate and ground truth");
  std::vector<Vec3> a, b;
  for (const auto& [i, j] : pairs) {
    a.push_back(est[i].pose.pos);
    b.push_back(gt[j].pose.pos);
  }
  ApeResult res;
  res.matched = pairs.size();
  if (opt.align && a.size() >= 3) res.alignment = umeyama_rigid(a, b);
  double sq = 0.0, sum = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double e = (res.alignment * a[k] - b[k]).norm();
    sq += e * e;
    sum += e;
    res.max = std::max(res.max, e);
  }
  res.rmse = std::sqrt(sq / static_cast<double>(a.size()));
  res.mean = sum / static_cast<double>(a.size());
  return res;
}

}  // namespace ctlio
