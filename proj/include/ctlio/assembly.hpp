#pragma once

// Global residual vector and Jacobian of one sliding window.
//
// Row layout: IMU factor b owns rows 12b..12b+11, lidar factor a owns row
// 12·K_I + a. Column layout: control point w+m owns columns 6m..6m+5 as
// (δθ, δp); the bias border is [6S, 6S+2] = δb_ω and [6S+3, 6S+5] = δb_a.
// Row weights live beside J and are applied only when forming normal
// equations.

#include "ctlio/factors.hpp"
#include "ctlio/parallel.hpp"

#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctlio {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kImuRows = 12;

inline int imu_row(int b) { return kImuRows * b; }
inline int lidar_row(int a, int num_imu) { return kImuRows * num_imu + a; }

struct FactorSet {
  std::vector<ImuFactor> imu;
  std::vector<LidarFactor> lidar;
};

struct LinearSystem {
  int num_imu = 0;
  int num_lidar = 0;
  int num_ctrl = 0;    // S
  int order = 0;       // N
  int first_ctrl = 0;  // spline index w of column block 0
  RowMajorMatrix jac;
  Eigen::VectorXd res;
  Eigen::VectorXd weight;
  std::vector<int> band_col;  // first control column of each row's band

  int rows() const { return static_cast<int>(jac.rows()); }
  int cols() const { return static_cast<int>(jac.cols()); }
  int bias_col() const { return 6 * num_ctrl; }
  int band_width() const { return 6 * order; }
  int ctrl_col(int spline_index) const { return 6 * (spline_index - first_ctrl); }
};

/// Zero-initialized (12·K_I + K_L) × (6S + 6) system.
inline LinearSystem allocate(int num_imu, int num_lidar, int num_ctrl, int order, int first_ctrl = 0,
                             int max_lidar = std::numeric_limits<int>::max()) {
  if (num_imu <= 0) throw std::invalid_argument("window must contain IMU factors");
  if (num_lidar < 0) throw std::invalid_argument("negative lidar factor count");
  if (num_lidar > max_lidar) {
    throw std::length_error("lidar factor count " + std::to_string(num_lidar) + " exceeds cap " +
                            std::to_string(max_lidar));
  }
  if (order < kMinOrder || order > kMaxOrder) throw std::invalid_argument("bad spline order");
  if (num_ctrl < order) throw std::invalid_argument("window needs at least N control points");
  LinearSystem sys;
  sys.num_imu = num_imu;
  sys.num_lidar = num_lidar;
  sys.num_ctrl = num_ctrl;
  sys.order = order;
  sys.first_ctrl = first_ctrl;
  const Eigen::Index rows = static_cast<Eigen::Index>(kImuRows) * num_imu + num_lidar;
  const Eigen::Index cols = 6 * static_cast<Eigen::Index>(num_ctrl) + 6;
  // Zeroed row by row: a single Zero() on a fresh buffer may be folded into
  // calloc, which defers the page faults into the first fill.
  sys.jac.resize(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) sys.jac.row(r).setZero();
  sys.res = Eigen::VectorXd::Zero(rows);
  sys.weight = Eigen::VectorXd::Zero(rows);
  sys.band_col.assign(static_cast<std::size_t>(rows), 0);
  return sys;
}

inline LinearSystem allocate_for(const FactorSet& fs, int num_ctrl, int order, int first_ctrl,
                                 int max_lidar = std::numeric_limits<int>::max()) {
  return allocate(static_cast<int>(fs.imu.size()), static_cast<int>(fs.lidar.size()), num_ctrl, order, first_ctrl,
                  max_lidar);
}

struct FillOptions {
  int threads = 1;
  double huber_threshold = 0.2;  // ≤ 0 disables robust weighting
  GravityModel gravity;
};

/// Throws if a factor's control points fall outside the window columns.
inline void check_factor_span(const LinearSystem& sys, const SplineTrajectory& traj, double t) {
  const int i = traj.locate(t).first;
  if (i < sys.first_ctrl || i + sys.order > sys.first_ctrl + sys.num_ctrl) {
    throw std::out_of_range("factor at t=" + std::to_string(t) + " couples control points outside the window");
  }
}

/// Writes every factor's residual, Jacobian blocks and row weights into its own
/// rows. Rows are disjoint, so the result does not depend on the thread count.
/// Only band and border entries are written: `sys` must come from allocate()
/// or from an earlier fill with the same factor set (band positions depend on
/// factor times only).
inline void fill_parallel(LinearSystem& sys, const FactorSet& fs, const SplineTrajectory& traj,
                          const ImuBiases& bias, const FillOptions& opt = {}) {
  if (static_cast<int>(fs.imu.size()) != sys.num_imu || static_cast<int>(fs.lidar.size()) != sys.num_lidar) {
    throw std::invalid_argument("factor counts do not match the allocated system");
  }
  if (traj.order() != sys.order) throw std::invalid_argument("spline order does not match the system");
  const int n_ord = sys.order;
  const int last_base = sys.first_ctrl + sys.num_ctrl - n_ord;
  const SegmentTable table(traj, sys.first_ctrl, last_base);
  auto base_of = [&](double t) {
    const InterpCoeffs c = traj.coefficients(t);
    if (c.i < sys.first_ctrl || c.i > last_base) check_factor_span(sys, traj, t);
    return c;
  };

  const std::size_t n_imu = fs.imu.size();
  const std::size_t total = n_imu + fs.lidar.size();
  const int bias_col = sys.bias_col();
  parallel_for(total, opt.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      if (k < n_imu) {
        const ImuFactor& f = fs.imu[k];
        const InterpCoeffs c = base_of(f.t);
        const ImuEvaluation ev = imu_residual_jacobian(f, table.at(c.i), c, traj, bias, opt.gravity);
        const int row = imu_row(static_cast<int>(k));
        const int col = sys.ctrl_col(c.i);
        for (int j = 0; j < n_ord; ++j) sys.jac.block<kImuRows, 6>(row, col + 6 * j) = ev.control_block(j);
        sys.jac.block<kImuRows, 6>(row, bias_col) = ImuEvaluation::bias_block();
        sys.res.segment<kImuRows>(row) = ev.r;
        sys.weight.segment<kImuRows>(row) = imu_row_weights(f.weights);
        for (int q = 0; q < kImuRows; ++q) sys.band_col[static_cast<std::size_t>(row + q)] = col;
      } else {
        const int a = static_cast<int>(k - n_imu);
        const LidarFactor& f = fs.lidar[static_cast<std::size_t>(a)];
        const InterpCoeffs c = base_of(f.t);
        const LidarEvaluation ev = lidar_residual_jacobian(f, table.at(c.i), c, traj);
        const int row = lidar_row(a, sys.num_imu);
        const int col = sys.ctrl_col(c.i);
        for (int j = 0; j < n_ord; ++j) {
          sys.jac.block<1, 3>(row, col + 6 * j) = ev.d_rot[j];
          sys.jac.block<1, 3>(row, col + 6 * j + 3) = ev.d_pos[j];
        }
        sys.res(row) = ev.r;
        sys.weight(row) = f.weight * huber_scale(ev.r, opt.huber_threshold);
        sys.band_col[static_cast<std::size_t>(row)] = col;
      }
    }
  });
}

struct NormalEquations {
  Eigen::MatrixXd hessian;  // JᵀWJ
  Eigen::VectorXd gradient; // −JᵀWr
};

/// Banded accumulation of JᵀWJ and −JᵀWr. Consecutive rows sharing a band
/// start are processed as one block product; IMU rows also touch the border.
inline NormalEquations normal_equations(const LinearSystem& sys) {
  const int dim = sys.cols();
  const int bw = sys.band_width();
  const int bias = sys.bias_col();
  NormalEquations ne;
  ne.hessian = Eigen::MatrixXd::Zero(dim, dim);
  ne.gradient = Eigen::VectorXd::Zero(dim);

  auto accumulate = [&](int row0, int count, int col, bool with_border) {
    const auto band = sys.jac.block(row0, col, count, bw);
    const auto w = sys.weight.segment(row0, count);
    const Eigen::MatrixXd wb = w.asDiagonal() * band;
    ne.hessian.block(col, col, bw, bw).noalias() += band.transpose() * wb;
    ne.gradient.segment(col, bw).noalias() -= wb.transpose() * sys.res.segment(row0, count);
    if (with_border) {
      const auto border = sys.jac.block(row0, bias, count, 6);
      const Eigen::MatrixXd wborder = w.asDiagonal() * border;
      const Eigen::MatrixXd cross = border.transpose() * wb;  // 6 × bw
      ne.hessian.block(bias, col, 6, bw) += cross;
      ne.hessian.block(col, bias, bw, 6) += cross.transpose();
      ne.hessian.block<6, 6>(bias, bias).noalias() += border.transpose() * wborder;
      ne.gradient.segment<6>(bias).noalias() -= wborder.transpose() * sys.res.segment(row0, count);
    }
  };

  const int imu_rows = kImuRows * sys.num_imu;
  for (int row = 0; row < imu_rows; row += kImuRows) {
    accumulate(row, kImuRows, sys.band_col[static_cast<std::size_t>(row)], true);
  }
  int row = imu_rows;
  while (row < sys.rows()) {
    const int col = sys.band_col[static_cast<std::size_t>(row)];
    int end = row + 1;
    while (end < sys.rows() && sys.band_col[static_cast<std::size_t>(end)] == col) ++end;
    accumulate(row, end - row, col, false);
    row = end;
  }
  return ne;
}

/// Plain dense JᵀWJ; the reference for normal_equations.
inline NormalEquations normal_equations_dense(const LinearSystem& sys) {
  NormalEquations ne;
  const Eigen::MatrixXd wj = sys.weight.asDiagonal() * sys.jac;
  ne.hessian = sys.jac.transpose() * wj;
  ne.gradient = -(wj.transpose() * sys.res);
  return ne;
}

}  // namespace ctlio
