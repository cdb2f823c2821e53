#pragma once

// Uniform B-splines on SE(3).
//
// Rotation uses the cumulative form
//   R(t) = R_i · Π_{j=1}^{N-1} Exp(λ̃_j · d_j),   d_j = Log(R_{i+j-1}⁻¹ R_{i+j})
// and position the plain (non-cumulative) form
//   p(t) = Σ_{j=0}^{N-1} λ_j · p_{i+j}
// which is the form whose derivative w.r.t. p_{i+j} is λ_j·I.

#include "ctlio/so3.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ctlio {

inline constexpr int kMinOrder = 2;
inline constexpr int kMaxOrder = 8;

using CoeffVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxOrder, 1>;
using BlendMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxOrder, kMaxOrder>;

struct BlendingMatrices {
  int order = 0;
  BlendMat basis;       // λ = basis · [1 s … s^{N-1}]ᵀ
  BlendMat cumulative;  // λ̃ = cumulative · [1 s … s^{N-1}]ᵀ; rows are suffix sums of basis rows
};

namespace detail {

inline double factorial(int n) {
  double f = 1.0;
  for (int k = 2; k <= n; ++k) f *= k;
  return f;
}

inline double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  return factorial(n) / (factorial(k) * factorial(n - k));
}

inline double int_pow(double base, int e) {
  double r = 1.0;  // 0^0 = 1
  for (int k = 0; k < e; ++k) r *= base;
  return r;
}

}  // namespace detail

/// b_{m,n} = 1/(n!(D−n)!) Σ_{l=m}^{D} (−1)^{l−m} C(N, l−m) (D−l)^{D−n},  D = N − 1.
inline BlendingMatrices blending(int order) {
  if (order < kMinOrder || order > kMaxOrder) {
    throw std::invalid_argument("spline order must be in [2, 8], got " + std::to_string(order));
  }
  const int n_ord = order;
  const int deg = order - 1;
  BlendingMatrices out;
  out.order = order;
  out.basis = BlendMat::Zero(n_ord, n_ord);
  for (int m = 0; m < n_ord; ++m) {
    for (int n = 0; n < n_ord; ++n) {
      double sum = 0.0;
      for (int l = m; l <= deg; ++l) {
        const double sign = ((l - m) % 2 == 0) ? 1.0 : -1.0;
        sum += sign * detail::binomial(n_ord, l - m) * detail::int_pow(deg - l, deg - n);
      }
      out.basis(m, n) = sum / (detail::factorial(n) * detail::factorial(deg - n));
    }
  }
  out.cumulative = BlendMat::Zero(n_ord, n_ord);
  for (int m = 0; m < n_ord; ++m) {
    for (int j = m; j < n_ord; ++j) out.cumulative.row(m) += out.basis.row(j);
  }
  return out;
}

/// Blending matrices computed once per order.
inline const BlendingMatrices& cached_blending(int order) {
  static const auto table = [] {
    std::array<BlendingMatrices, kMaxOrder + 1> t{};
    for (int n = kMinOrder; n <= kMaxOrder; ++n) t[n] = blending(n);
    return t;
  }();
  if (order < kMinOrder || order > kMaxOrder) {
    throw std::invalid_argument("spline order must be in [2, 8], got " + std::to_string(order));
  }
  return table[order];
}

/// Interpolation coefficients at one time instant.
struct InterpCoeffs {
  int i = 0;       // base knot: t ∈ [t_i, t_{i+1})
  double s = 0.0;  // normalized time in [0, 1)
  CoeffVec lambda;          // λ_j
  CoeffVec lambda_dot;      // dλ_j/dt
  CoeffVec lambda_ddot;     // d²λ_j/dt²
  CoeffVec cum;             // λ̃_j
  CoeffVec cum_dot;         // dλ̃_j/dt
};

inline InterpCoeffs make_coeffs(int order, double dt, int i, double s) {
  const auto& bm = cached_blending(order);
  CoeffVec pw(order), pw_dot(order), pw_ddot(order);
  for (int n = 0; n < order; ++n) {
    pw(n) = detail::int_pow(s, n);
    pw_dot(n) = n >= 1 ? n * detail::int_pow(s, n - 1) / dt : 0.0;
    pw_ddot(n) = n >= 2 ? n * (n - 1) * detail::int_pow(s, n - 2) / (dt * dt) : 0.0;
  }
  InterpCoeffs c;
  c.i = i;
  c.s = s;
  c.lambda = bm.basis * pw;
  c.lambda_dot = bm.basis * pw_dot;
  c.lambda_ddot = bm.basis * pw_ddot;
  c.cum = bm.cumulative * pw;
  c.cum_dot = bm.cumulative * pw_dot;
  return c;
}

/// Control rotations of one interval and their relative logs.
struct Segment {
  int order = 0;
  int i = 0;
  std::array<Mat3, kMaxOrder> rot{};  // R_{i+j}, j = 0..N-1
  std::array<Vec3, kMaxOrder> d{};    // d_j, j = 1..N-1 (d_0 unused)
};

/// Products along the cumulative rotation chain at one time instant.
struct RotationChain {
  Mat3 rot = Mat3::Identity();                      // R(t)
  std::array<Mat3, kMaxOrder> a{};                  // A_j = Exp(λ̃_j d_j), j = 1..N-1
  std::array<Mat3, kMaxOrder> p{};                  // P_j = (A_{j+1} ⋯ A_{N-1})ᵀ, P_{N-1} = I
  std::array<Vec3, kMaxOrder + 1> omega{};          // ω^(j), j = 1..N; ω^(1) = 0
};

inline RotationChain evaluate_chain(const Segment& seg, const InterpCoeffs& c, bool with_omega) {
  const int n_ord = seg.order;
  RotationChain ch;
  Mat3 r = seg.rot[0];
  for (int j = 1; j < n_ord; ++j) {
    ch.a[j] = so3::exp(c.cum(j) * seg.d[j]);
    r = r * ch.a[j];
  }
  ch.rot = r;
  ch.p[n_ord - 1] = Mat3::Identity();
  for (int j = n_ord - 1; j >= 1; --j) ch.p[j - 1] = ch.p[j] * ch.a[j].transpose();
  if (with_omega) {
    // ω^(j+1) = A_jᵀ ω^(j) + dλ̃_j/dt · d_j, starting from ω^(1) = 0; ω(t) = ω^(N).
    ch.omega[1] = Vec3::Zero();
    for (int j = 1; j < n_ord; ++j) {
      ch.omega[j + 1] = ch.a[j].transpose() * ch.omega[j] + c.cum_dot(j) * seg.d[j];
    }
  }
  return ch;
}

/// Uniform SE(3) B-spline: knot m sits at t0 + m·dt and carries control pose m.
class SplineTrajectory {
 public:
  /// Right-endpoint times are clamped to this normalized time in the last interval.
  static constexpr double kEndClamp = 1.0 - 1e-12;
  /// Slack (seconds) for domain checks against accumulated rounding.
  static constexpr double kTimeSlack = 1e-9;

  SplineTrajectory() = default;

  /// Seeds N−1 copies of `seed`, so the domain is the single instant t0.
  SplineTrajectory(double t0, double dt, int order, const Pose& seed)
      : SplineTrajectory(t0, dt, order, std::vector<Pose>(static_cast<size_t>(std::max(order - 1, 1)), seed)) {}

  SplineTrajectory(double t0, double dt, int order, std::vector<Pose> ctrl)
      : t0_(t0), dt_(dt), order_(order), ctrl_(std::move(ctrl)) {
    cached_blending(order);  // validates order
    if (!(dt > 0.0)) throw std::invalid_argument("knot length must be positive");
    if (static_cast<int>(ctrl_.size()) < order - 1) {
      throw std::invalid_argument("spline needs at least order-1 control points");
    }
  }

  double t0() const { return t0_; }
  double dt() const { return dt_; }
  int order() const { return order_; }
  int num_control() const { return static_cast<int>(ctrl_.size()); }
  int last_index() const { return num_control() - 1; }
  double knot(int m) const { return t0_ + m * dt_; }
  /// Upper end of the interpolation domain, t_{M−N+2}.
  double t_end() const { return knot(last_index() - order_ + 2); }
  bool in_domain(double t) const { return t >= t0_ - kTimeSlack && t <= t_end() + kTimeSlack; }

  const Pose& control(int m) const { return ctrl_.at(static_cast<size_t>(m)); }
  Pose& control(int m) { return ctrl_.at(static_cast<size_t>(m)); }
  const std::vector<Pose>& controls() const { return ctrl_; }

  /// (i, s) with t_i ≤ t < t_{i+1}; the right endpoint maps to (M−N+1, 1−1e-12).
  std::pair<int, double> locate(double t) const {
    if (!in_domain(t)) {
      throw std::out_of_range("time " + std::to_string(t) + " outside spline domain [" +
                              std::to_string(t0_) + ", " + std::to_string(t_end()) + "]");
    }
    const int i_max = last_index() - order_ + 1;
    if (i_max < 0) throw std::out_of_range("spline domain is a single instant");
    const double u = std::max(0.0, (t - t0_) / dt_);
    int i = static_cast<int>(std::floor(u));
    double s = u - i;
    if (i > i_max) {
      i = i_max;
      s = kEndClamp;
    } else if (s >= 1.0) {
      s = kEndClamp;
    }
    return {i, s};
  }

  InterpCoeffs coefficients(double t) const {
    const auto [i, s] = locate(t);
    return make_coeffs(order_, dt_, i, s);
  }

  Segment segment(int i) const {
    Segment seg;
    seg.order = order_;
    seg.i = i;
    for (int j = 0; j < order_; ++j) seg.rot[j] = control(i + j).rot.matrix();
    for (int j = 1; j < order_; ++j) seg.d[j] = so3::log(seg.rot[j - 1].transpose() * seg.rot[j]);
    return seg;
  }

  Vec3 position(const InterpCoeffs& c) const {
    Vec3 p = Vec3::Zero();
    for (int j = 0; j < order_; ++j) p += c.lambda(j) * control(c.i + j).pos;
    return p;
  }

  Pose pose_at(double t) const {
    const InterpCoeffs c = coefficients(t);
    const RotationChain ch = evaluate_chain(segment(c.i), c, false);
    return Pose(Rot3::from_orthonormal(ch.rot), position(c));
  }

  /// Body-frame angular velocity (R⁻¹Ṙ)^∨.
  Vec3 angvel_at(double t) const {
    const InterpCoeffs c = coefficients(t);
    return evaluate_chain(segment(c.i), c, true).omega[order_];
  }

  /// World-frame linear velocity ṗ(t).
  Vec3 vel_at(double t) const {
    const InterpCoeffs c = coefficients(t);
    Vec3 v = Vec3::Zero();
    for (int j = 0; j < order_; ++j) v += c.lambda_dot(j) * control(c.i + j).pos;
    return v;
  }

  /// World-frame linear acceleration p̈(t).
  Vec3 accel_at(double t) const {
    const InterpCoeffs c = coefficients(t);
    Vec3 a = Vec3::Zero();
    for (int j = 0; j < order_; ++j) a += c.lambda_ddot(j) * control(c.i + j).pos;
    return a;
  }

  /// Number of control points needed to cover [t0, t_max]: M + 1 with
  /// M = ⌈(t_max − t0)/dt⌉ + N − 2.
  int required_controls(double t_max) const {
    const double u = (t_max - t0_) / dt_;
    const int knots = std::max(0, static_cast<int>(std::ceil(u - 1e-9)));
    return knots + order_ - 1;
  }

  /// Appends control points until the domain covers t_max. New points continue
  /// the relative motion between the last two control poses.
  void extend_to(double t_max) {
    const int need = required_controls(t_max);
    while (num_control() < need) {
      const Pose& last = ctrl_.back();
      if (ctrl_.size() < 2) {
        ctrl_.push_back(last);
        continue;
      }
      const Pose& prev = ctrl_[ctrl_.size() - 2];
      const Rot3 step = prev.rot.inverse() * last.rot;
      Pose next(Rot3(last.rot.matrix() * step.matrix()), 2.0 * last.pos - prev.pos);
      ctrl_.push_back(next);
    }
  }

 private:
  double t0_ = 0.0;
  double dt_ = 1.0;
  int order_ = 4;
  std::vector<Pose> ctrl_;
};

}  // namespace ctlio
