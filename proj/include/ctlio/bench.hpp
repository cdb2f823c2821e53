#pragma once

// Timing harnesses: fill/solve scaling over thread counts, and a comparison
// of the direct solver against a generic rebuild-every-iteration LM loop.

#include "ctlio/rng.hpp"
#include "ctlio/solver.hpp"
#include "ctlio/worldsim.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <chrono>
#include <memory>
#include <vector>

namespace ctlio {

/// One window: true spline, noisy factors over [t_s, t_e) and a perturbed
/// starting guess for the window controls and biases.
struct BenchFixture {
  SplineTrajectory truth;
  SplineTrajectory initial;
  ImuBiases bias0;
  int first_ctrl = 0;
  int num_ctrl = 0;
  FactorSet factors;

  WindowState state(SplineTrajectory& traj) const {
    WindowState st;
    st.traj = &traj;
    st.first_ctrl = first_ctrl;
    st.num_ctrl = num_ctrl;
    st.bias = bias0;
    return st;
  }
};

struct BenchFixtureOptions {
  std::string preset = "room_dynamic";
  double t_start = 2.0;
  double span = 0.3;  // three 0.1 s bundles
  int num_lidar = 8000;
  double imu_rate = 400.0;
  double sigma_range = 0.02;
  double sigma_gyro = 2e-3;
  double sigma_accel = 2e-2;
  double init_rot = 0.01;  // rad, starting-guess error
  double init_pos = 0.03;  // m
  std::uint64_t seed = 1;
};

/// Lidar factors take random points 2..10 m away on random planes through
/// them (range noise along the normal); IMU factors sample the truth at the
/// given rate with white noise. Weights are the inverse noise variances.
inline BenchFixture make_bench_fixture(const BenchFixtureOptions& opt) {
  const Scenario sc = make_preset(opt.preset, true);
  BenchFixture fx;
  fx.truth = sc.truth;
  const double t_s = opt.t_start, t_e = opt.t_start + opt.span;
  fx.first_ctrl = fx.truth.locate(t_s).first;
  fx.num_ctrl = fx.truth.locate(t_e - 1e-9).first + fx.truth.order() - fx.first_ctrl;
  Rng rng(opt.seed, 0x20000);

  ImuWeights w;
  w.gyro = 1.0 / (opt.sigma_gyro * opt.sigma_gyro);
  w.accel = 1.0 / (opt.sigma_accel * opt.sigma_accel);
  w.bias_gyro = 1e4;
  w.bias_accel = 1e2;
  const GravityModel g;
  for (double t = t_s; t < t_e - 1e-12; t += 1.0 / opt.imu_rate) {
    ImuFactor f;
    f.t = t;
    f.gyro = fx.truth.angvel_at(t) + rng.normal3(opt.sigma_gyro);
    f.accel = fx.truth.pose_at(t).rot.matrix().transpose() * (fx.truth.accel_at(t) + g.g_world) +
              rng.normal3(opt.sigma_accel);
    f.weights = w;
    fx.factors.imu.push_back(f);
  }
  for (int k = 0; k < opt.num_lidar; ++k) {
    LidarFactor f;
    f.t = rng.uniform(t_s, t_e);
    f.f_body = rng.unit3() * rng.uniform(2.0, 10.0);
    f.normal = rng.unit3();
    f.mu = -f.normal.dot(fx.truth.pose_at(f.t) * f.f_body) + rng.normal(opt.sigma_range);
    f.weight = 1.0 / (opt.sigma_range * opt.sigma_range);
    fx.factors.lidar.push_back(f);
  }
  std::sort(fx.factors.lidar.begin(), fx.factors.lidar.end(),
            [](const LidarFactor& a, const LidarFactor& b) { return a.t < b.t; });

  // A common offset plus a small per-control jitter.
  fx.initial = fx.truth;
  const Vec6 common = (Vec6() << rng.normal3(opt.init_rot), rng.normal3(opt.init_pos)).finished();
  for (int m = fx.first_ctrl; m < fx.first_ctrl + fx.num_ctrl; ++m) {
    const Vec6 jitter = (Vec6() << rng.normal3(0.1 * opt.init_rot), rng.normal3(0.1 * opt.init_pos)).finished();
    fx.initial.control(m) = boxplus(fx.initial.control(m), common + jitter);
  }
  return fx;
}

struct ScalingRow {
  int num_lidar = 0;
  int threads = 0;
  double t_fill = 0.0;   // median seconds
  double t_solve = 0.0;  // normal equations + factorization, median seconds
};

/// Median fill and solve times on the fixture's starting guess.
inline ScalingRow time_fill_solve(const BenchFixture& fx, int threads, int reps) {
  std::vector<double> fill, solve;
  SplineTrajectory traj = fx.initial;
  const WindowState st = fx.state(traj);
  FillOptions fo;
  fo.threads = threads;
  for (int r = 0; r < reps; ++r) {
    LinearSystem sys = allocate_for(fx.factors, st.num_ctrl, traj.order(), st.first_ctrl);
    auto t0 = std::chrono::steady_clock::now();
    fill_parallel(sys, fx.factors, traj, st.bias, fo);
    fill.push_back(detail::seconds_since(t0));
    t0 = std::chrono::steady_clock::now();
    const StepResult step = solve_step(normal_equations(sys), 1e-9);
    solve.push_back(detail::seconds_since(t0));
    if (!step.ok) throw std::runtime_error("bench fixture is singular");
  }
  auto median = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
    return v[v.size() / 2];
  };
  return {static_cast<int>(fx.factors.lidar.size()), threads, median(fill), median(solve)};
}

/// Generic NLS loop as a modelling framework runs it: every iteration
/// re-evaluates each factor into freshly allocated per-block Jacobians,
/// rebuilds a sparse J from triplets, forms JᵀWJ, and factorizes with a
/// general sparse Cholesky. Levenberg-Marquardt with accept/reject.
struct NlsOptions {
  int max_iters = 20;
  double ftol = 1e-6;  // relative cost decrease that stops the loop
  double lambda0 = 1e-4;
  double huber_threshold = 0.2;
  GravityModel gravity;
};

struct NlsIteration {
  double cost_before = 0.0;
  double cost_after = 0.0;
  bool accepted = false;
  double t_form = 0.0;   // evaluation + sparse assembly + JᵀWJ
  double t_solve = 0.0;
  double t_total = 0.0;
};

struct NlsReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  double t_total = 0.0;
  std::vector<NlsIteration> iters;
};

namespace detail {

// One residual block with its own heap-held Jacobians, one per parameter block.
struct ResidualBlock {
  int rows = 0;
  Eigen::VectorXd r;
  Eigen::VectorXd w;
  std::vector<int> param_col;
  std::vector<std::unique_ptr<Eigen::MatrixXd>> jac;
};

inline std::vector<ResidualBlock> evaluate_blocks(const FactorSet& fs, const SplineTrajectory& traj,
                                                  const WindowState& st, const NlsOptions& opt) {
  std::vector<ResidualBlock> out;
  const int bias_col = 6 * st.num_ctrl;
  for (const ImuFactor& f : fs.imu) {
    const ImuEvaluation ev = imu_residual_jacobian(f, traj, st.bias, opt.gravity);
    ResidualBlock b;
    b.rows = kImuRows;
    b.r = ev.r;
    b.w = imu_row_weights(f.weights);
    for (int j = 0; j < ev.order; ++j) {
      b.param_col.push_back(6 * (ev.i + j - st.first_ctrl));
      b.jac.push_back(std::make_unique<Eigen::MatrixXd>(ev.control_block(j)));
    }
    b.param_col.push_back(bias_col);
    b.jac.push_back(std::make_unique<Eigen::MatrixXd>(ImuEvaluation::bias_block()));
    out.push_back(std::move(b));
  }
  for (const LidarFactor& f : fs.lidar) {
    const LidarEvaluation ev = lidar_residual_jacobian(f, traj);
    ResidualBlock b;
    b.rows = 1;
    b.r = Eigen::VectorXd::Constant(1, ev.r);
    b.w = Eigen::VectorXd::Constant(1, f.weight * huber_scale(ev.r, opt.huber_threshold));
    for (int j = 0; j < ev.order; ++j) {
      b.param_col.push_back(6 * (ev.i + j - st.first_ctrl));
      auto m = std::make_unique<Eigen::MatrixXd>(1, 6);
      *m << ev.d_rot[j], ev.d_pos[j];
      b.jac.push_back(std::move(m));
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace detail

inline NlsReport run_nls_baseline(WindowState st, const FactorSet& fs, const NlsOptions& opt = {}) {
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  const CostOptions copt{1, opt.huber_threshold, opt.gravity};
  NlsReport rep;
  double cost = evaluate_cost(fs, *st.traj, st.bias, copt);
  rep.initial_cost = cost;
  double lambda = opt.lambda0;
  for (int it = 0; it < opt.max_iters; ++it) {
    const auto t_iter = clock::now();
    NlsIteration rec;
    rec.cost_before = cost;

    auto t0 = clock::now();
    const std::vector<detail::ResidualBlock> blocks = detail::evaluate_blocks(fs, *st.traj, st, opt);
    std::vector<Eigen::Triplet<double>> trip;
    std::vector<double> r, w;
    int row = 0;
    for (const auto& b : blocks) {
      for (std::size_t p = 0; p < b.jac.size(); ++p) {
        const Eigen::MatrixXd& m = *b.jac[p];
        for (int i = 0; i < m.rows(); ++i) {
          for (int j = 0; j < m.cols(); ++j) {
            if (m(i, j) != 0.0) trip.emplace_back(row + i, b.param_col[p] + j, m(i, j));
          }
        }
      }
      for (int i = 0; i < b.rows; ++i) {
        r.push_back(b.r(i));
        w.push_back(b.w(i));
      }
      row += b.rows;
    }
    Eigen::SparseMatrix<double> jac(row, st.dim());
    jac.setFromTriplets(trip.begin(), trip.end());
    const Eigen::Map<const Eigen::VectorXd> rv(r.data(), row), wv(w.data(), row);
    const Eigen::SparseMatrix<double> jt = jac.transpose();
    const Eigen::SparseMatrix<double> wj = wv.asDiagonal() * jac;
    Eigen::SparseMatrix<double> h = jt * wj;
    const Eigen::VectorXd grad = -(jt * wv.cwiseProduct(rv));
    rec.t_form = detail::seconds_since(t0);

    t0 = clock::now();
    for (int k = 0; k < h.outerSize(); ++k) h.coeffRef(k, k) *= (1.0 + lambda);
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(h);
    const Eigen::VectorXd delta = ldlt.solve(grad);
    rec.t_solve = detail::seconds_since(t0);
    if (ldlt.info() != Eigen::Success) throw std::runtime_error("baseline factorization failed");

    const SplineTrajectory saved = *st.traj;
    const ImuBiases saved_bias = st.bias;
    update(st, delta);
    const double trial = evaluate_cost(fs, *st.traj, st.bias, copt);
    rec.accepted = trial < cost;
    if (rec.accepted) {
      rec.cost_after = trial;
      lambda = std::max(lambda / 10.0, 1e-12);
    } else {
      *st.traj = saved;
      st.bias = saved_bias;
      rec.cost_after = cost;
      lambda *= 10.0;
    }
    rec.t_total = detail::seconds_since(t_iter);
    rep.iters.push_back(rec);
    if (rec.accepted) {
      const double decrease = (cost - trial) / cost;
      cost = trial;
      if (decrease < opt.ftol) break;
    }
  }
  rep.final_cost = cost;
  rep.t_total = detail::seconds_since(t_start);
  return rep;
}

struct MimicResult {
  int num_lidar = 0;
  double direct_time = 0.0;  // seconds per window solve
  double baseline_time = 0.0;
  double direct_cost = 0.0;
  double baseline_cost = 0.0;
  int direct_iters = 0;
  int baseline_iters = 0;
  std::vector<double> direct_iter_times;
  std::vector<double> baseline_iter_times;

  double cost_gap() const { return std::abs(direct_cost - baseline_cost) / std::max(baseline_cost, 1e-300); }
};

/// Runs both strategies from the same starting guess.
inline MimicResult compare_with_baseline(const BenchFixture& fx, const InnerLoopConfig& direct_cfg,
                                         const NlsOptions& nls = {}) {
  MimicResult res;
  res.num_lidar = static_cast<int>(fx.factors.lidar.size());

  SplineTrajectory traj = fx.initial;
  WindowState st = fx.state(traj);
  FactorSet fs = fx.factors;
  auto t0 = std::chrono::steady_clock::now();
  const SolveReport rep = inner_loop(st, fs, direct_cfg);
  res.direct_time = detail::seconds_since(t0);
  res.direct_cost = rep.final_cost();
  res.direct_iters = rep.iterations;
  for (const auto& it : rep.iters) {
    res.direct_iter_times.push_back(it.t_cost + it.t_build + it.t_fill + it.t_solve + it.t_update);
  }

  SplineTrajectory traj_b = fx.initial;
  const NlsReport nr = run_nls_baseline(fx.state(traj_b), fx.factors, nls);
  res.baseline_time = nr.t_total;
  res.baseline_cost = nr.final_cost;
  res.baseline_iters = static_cast<int>(nr.iters.size());
  for (const auto& it : nr.iters) res.baseline_iter_times.push_back(it.t_total);
  return res;
}

}  // namespace ctlio
