#pragma once

// Exact k-nearest-neighbour search over a static 3-D point set.

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

namespace ctlio {

struct Neighbor {
  std::uint32_t index = 0;
  double sq_dist = 0.0;
};

/// Neighbours are ordered by (distance, index), so ties resolve the same way
/// on every build.
inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  return a.sq_dist < b.sq_dist || (a.sq_dist == b.sq_dist && a.index < b.index);
}

class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::vector<Eigen::Vector3d> pts) { build(std::move(pts)); }

  void build(std::vector<Eigen::Vector3d> pts) {
    points_ = std::move(pts);
    perm_.resize(points_.size());
    std::iota(perm_.begin(), perm_.end(), 0u);
    nodes_.clear();
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    if (!points_.empty()) build_node(0, static_cast<std::uint32_t>(points_.size()));
  }

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Eigen::Vector3d& point(std::uint32_t i) const { return points_[i]; }
  const std::vector<Eigen::Vector3d>& points() const { return points_; }

  /// Up to k nearest points within sqrt(max_sq_dist), sorted by neighbor_less.
  std::vector<Neighbor> knn(const Eigen::Vector3d& q, int k,
                            double max_sq_dist = std::numeric_limits<double>::infinity()) const {
    std::vector<Neighbor> heap;
    if (k <= 0 || nodes_.empty()) return heap;
    heap.reserve(static_cast<std::size_t>(k) + 1);
    search(0, q, static_cast<std::size_t>(k), max_sq_dist, heap);
    std::sort_heap(heap.begin(), heap.end(), neighbor_less);
    return heap;
  }

 private:
  static constexpr std::uint32_t kLeafSize = 8;
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

  struct Node {
    std::uint32_t begin = 0, end = 0;  // range in perm_
    std::uint32_t left = kNone, right = kNone;
    int axis = 0;
    double split = 0.0;
  };

  std::uint32_t build_node(std::uint32_t begin, std::uint32_t end) {
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back(Node{begin, end, kNone, kNone, 0, 0.0});
    if (end - begin <= kLeafSize) return id;
    Eigen::Vector3d lo = points_[perm_[begin]], hi = lo;
    for (std::uint32_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[perm_[i]]);
      hi = hi.cwiseMax(points_[perm_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(perm_.begin() + begin, perm_.begin() + mid, perm_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                       const double pa = points_[a](axis), pb = points_[b](axis);
                       return pa < pb || (pa == pb && a < b);
                     });
    const double split = points_[perm_[mid]](axis);
    const std::uint32_t left = build_node(begin, mid);
    const std::uint32_t right = build_node(mid, end);
    Node& n = nodes_[id];
    n.axis = axis;
    n.split = split;
    n.left = left;
    n.right = right;
    return id;
  }

  void offer(std::uint32_t idx, double d2, std::size_t k, std::vector<Neighbor>& heap) const {
    const Neighbor cand{idx, d2};
    if (heap.size() < k) {
      heap.push_back(cand);
      std::push_heap(heap.begin(), heap.end(), neighbor_less);
    } else if (neighbor_less(cand, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), neighbor_less);
      heap.back() = cand;
      std::push_heap(heap.begin(), heap.end(), neighbor_less);
    }
  }

  void search(std::uint32_t id, const Eigen::Vector3d& q, std::size_t k, double max_sq,
              std::vector<Neighbor>& heap) const {
    const Node& n = nodes_[id];
    if (n.left == kNone) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const std::uint32_t idx = perm_[i];
        const double d2 = (points_[idx] - q).squaredNorm();
        if (d2 <= max_sq) offer(idx, d2, k, heap);
      }
      return;
    }
    const double diff = q(n.axis) - n.split;
    const std::uint32_t near = diff < 0.0 ? n.left : n.right;
    const std::uint32_t far = diff < 0.0 ? n.right : n.left;
    search(near, q, k, max_sq, heap);
    // Points equal to the split value can sit on either side, so the far side is
    // visited whenever the plane is within the current bound (inclusive).
    const double bound = heap.size() < k ? max_sq : std::min(max_sq, heap.front().sq_dist);
    if (diff * diff <= bound) search(far, q, k, max_sq, heap);
  }

  std::vector<Eigen::Vector3d> points_;
  std::vector<std::uint32_t> perm_;
  std::vector<Node> nodes_;
};

}  // namespace ctlio
