#pragma once

// Build-solve-update iterations over one window.

#include "ctlio/assembly.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <chrono>
#include <functional>
#include <numeric>

namespace ctlio {

struct WindowState {
  SplineTrajectory* traj = nullptr;
  int first_ctrl = 0;  // w
  int num_ctrl = 0;    // S
  ImuBiases bias;

  int dim() const { return 6 * num_ctrl + 6; }
};

struct CostOptions {
  int threads = 1;
  double huber_threshold = 0.2;
  GravityModel gravity;
};

/// Per-factor cost terms: IMU factors first, then lidar, in FactorSet order.
/// Lidar: w·ρ(r) with ρ the Huber loss; IMU: Σ_rows w_row·r².
inline std::vector<double> factor_costs(const FactorSet& fs, const SplineTrajectory& traj, const ImuBiases& bias,
                                        const CostOptions& opt = {}) {
  const std::size_t n_imu = fs.imu.size();
  std::vector<double> out(n_imu + fs.lidar.size(), 0.0);
  parallel_for(out.size(), opt.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      if (k < n_imu) {
        const ImuFactor& f = fs.imu[k];
        const Vec12 r = imu_residual(f, traj, bias, opt.gravity);
        out[k] = r.dot(imu_row_weights(f.weights).cwiseProduct(r));
      } else {
        const LidarFactor& f = fs.lidar[k - n_imu];
        out[k] = f.weight * huber_loss(lidar_residual(f, traj), opt.huber_threshold);
      }
    }
  });
  return out;
}

/// Total cost; the reduction is sequential so the value is thread-count independent.
inline double evaluate_cost(const FactorSet& fs, const SplineTrajectory& traj, const ImuBiases& bias,
                            const CostOptions& opt = {}) {
  const std::vector<double> c = factor_costs(fs, traj, bias, opt);
  return std::accumulate(c.begin(), c.end(), 0.0);
}

struct StepResult {
  Eigen::VectorXd delta;
  bool ok = false;
  double epsilon = 0.0;
  double relative_residual = 0.0;  // ‖(H+εI)δ − g‖ / ‖g‖
};

/// Solves (H + εI)δ = g with ε = damping·trace(H)/dim by Cholesky. A failed
/// factorization leaves ok = false.
inline StepResult solve_step(const NormalEquations& ne, double damping = 1e-6) {
  StepResult out;
  const Eigen::Index dim = ne.hessian.rows();
  out.epsilon = damping * ne.hessian.trace() / static_cast<double>(std::max<Eigen::Index>(dim, 1));
  Eigen::MatrixXd a = ne.hessian;
  a.diagonal().array() += out.epsilon;
  const Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) return out;
  out.delta = llt.solve(ne.gradient);
  if (!out.delta.allFinite()) return out;
  const double gnorm = ne.gradient.norm();
  out.relative_residual = gnorm > 0.0 ? (a * out.delta - ne.gradient).norm() / gnorm : 0.0;
  out.ok = true;
  return out;
}

/// Boxplus-updates every window control point and adds the bias increments.
inline void update(WindowState& st, const Eigen::VectorXd& delta) {
  if (delta.size() != st.dim()) throw std::invalid_argument("update: delta dimension mismatch");
  for (int m = 0; m < st.num_ctrl; ++m) {
    Pose& c = st.traj->control(st.first_ctrl + m);
    c = boxplus(c, delta.segment<6>(6 * m));
  }
  st.bias.gyro += delta.segment<3>(6 * st.num_ctrl);
  st.bias.accel += delta.segment<3>(6 * st.num_ctrl + 3);
}

/// λ_min/λ_max of the lidar information about a rigid motion of the whole
/// window: rows [((q − c) × n)ᵀ/L, nᵀ] with q the world point, c the centroid
/// and L the RMS spread, so rotation and translation are comparably scaled.
/// Returns 0 when there are no lidar factors.
inline double lidar_observability(const FactorSet& fs, const SplineTrajectory& traj) {
  if (fs.lidar.empty()) return 0.0;
  std::vector<Vec3> q(fs.lidar.size());
  Vec3 centroid = Vec3::Zero();
  for (std::size_t k = 0; k < fs.lidar.size(); ++k) {
    q[k] = traj.pose_at(fs.lidar[k].t) * fs.lidar[k].f_body;
    centroid += q[k];
  }
  centroid /= static_cast<double>(q.size());
  double spread = 0.0;
  for (const Vec3& x : q) spread += (x - centroid).squaredNorm();
  const double len = std::max(std::sqrt(spread / static_cast<double>(q.size())), 1e-6);
  Eigen::Matrix<double, 6, 6> info = Eigen::Matrix<double, 6, 6>::Zero();
  for (std::size_t k = 0; k < q.size(); ++k) {
    Eigen::Matrix<double, 6, 1> a;
    a << (q[k] - centroid).cross(fs.lidar[k].normal) / len, fs.lidar[k].normal;
    info.noalias() += fs.lidar[k].weight * a * a.transpose();
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> es(info, Eigen::EigenvaluesOnly);
  const double lmax = es.eigenvalues()(5);
  return lmax > 0.0 ? std::max(0.0, es.eigenvalues()(0)) / lmax : 0.0;
}

struct InnerLoopConfig {
  int max_iters = 3;
  double conv_tol = 1e-3;        // relative cost decrease
  double cost_floor = 1e-14;     // per-factor cost below which the loop counts as converged
  double damping = 1e-6;
  double degeneracy_ratio = 1e-3;  // lidar_observability below this skips the update
  int threads = 1;
  double huber_threshold = 0.2;
  GravityModel gravity;
};

struct IterationRecord {
  double cost_before = 0.0;
  double cost_after = 0.0;
  double delta_norm = 0.0;
  double relative_residual = 0.0;
  double t_build = 0.0;  // allocate
  double t_fill = 0.0;
  double t_solve = 0.0;  // normal equations + factorization + back-substitution
  double t_update = 0.0;
  double t_cost = 0.0;
  double t_reassoc = 0.0;
};

struct SolveReport {
  int iterations = 0;
  bool converged = false;
  bool degenerate = false;
  double observability = 0.0;
  int monotone_violations = 0;
  std::vector<IterationRecord> iters;

  double final_cost() const { return iters.empty() ? 0.0 : iters.back().cost_after; }
};

namespace detail {
inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}
}  // namespace detail

/// Runs up to cfg.max_iters build-solve-update iterations. After each update,
/// `reassociate(factors)` may rebuild the lidar factors from the new estimate;
/// the next iteration's starting cost is evaluated on the rebuilt set. The
/// loop stops once the relative decrease over one iteration drops below
/// cfg.conv_tol, or the cost per factor drops below cfg.cost_floor (noise-free
/// data, where the cost keeps shrinking geometrically). Cost before/after an
/// iteration always use the same factors.
template <typename Reassociate>
SolveReport inner_loop(WindowState& st, FactorSet& factors, const InnerLoopConfig& cfg, Reassociate&& reassociate) {
  using clock = std::chrono::steady_clock;
  SolveReport rep;
  if (cfg.max_iters <= 0) return rep;
  const CostOptions copt{cfg.threads, cfg.huber_threshold, cfg.gravity};
  const FillOptions fopt{cfg.threads, cfg.huber_threshold, cfg.gravity};

  rep.observability = lidar_observability(factors, *st.traj);
  if (rep.observability < cfg.degeneracy_ratio) {
    rep.degenerate = true;
    return rep;
  }

  for (int it = 0; it < cfg.max_iters; ++it) {
    IterationRecord rec;
    auto t0 = clock::now();
    rec.cost_before = evaluate_cost(factors, *st.traj, st.bias, copt);
    rec.t_cost = detail::seconds_since(t0);

    t0 = clock::now();
    LinearSystem sys = allocate_for(factors, st.num_ctrl, st.traj->order(), st.first_ctrl);
    rec.t_build = detail::seconds_since(t0);
    t0 = clock::now();
    fill_parallel(sys, factors, *st.traj, st.bias, fopt);
    rec.t_fill = detail::seconds_since(t0);

    t0 = clock::now();
    const NormalEquations ne = normal_equations(sys);
    const StepResult step = solve_step(ne, cfg.damping);
    rec.t_solve = detail::seconds_since(t0);
    if (!step.ok) {
      rep.degenerate = true;
      break;
    }
    rec.delta_norm = step.delta.norm();
    rec.relative_residual = step.relative_residual;

    t0 = clock::now();
    update(st, step.delta);
    rec.t_update = detail::seconds_since(t0);

    t0 = clock::now();
    rec.cost_after = evaluate_cost(factors, *st.traj, st.bias, copt);
    rec.t_cost += detail::seconds_since(t0);
    if (rec.cost_after > rec.cost_before) ++rep.monotone_violations;

    const double decrease = rec.cost_before > 0.0 ? (rec.cost_before - rec.cost_after) / rec.cost_before : 0.0;
    const double floor = cfg.cost_floor * static_cast<double>(factors.imu.size() + factors.lidar.size());
    if (decrease < cfg.conv_tol || rec.cost_after <= floor) {
      rep.converged = true;
    }
    t0 = clock::now();
    reassociate(factors);
    rec.t_reassoc = detail::seconds_since(t0);
    rep.iters.push_back(rec);
    rep.iterations = it + 1;
    if (rep.converged) break;
  }
  return rep;
}

inline SolveReport inner_loop(WindowState& st, FactorSet& factors, const InnerLoopConfig& cfg) {
  return inner_loop(st, factors, cfg, [](FactorSet&) {});
}

}  // namespace ctlio
