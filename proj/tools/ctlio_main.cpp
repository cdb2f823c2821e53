// ctlio command-line tool: simulate, odometry, ape, check-jacobians, bench, validate.
//
// Exit codes: 0 success, 1 I/O or format error, 2 usage error (bad flags,
// unknown preset or config key), 3 pipeline failure, 4 no overlapping
// timestamps for APE, 5 Jacobian check violation, 6 dataset failed validation.

#include "ctlio/ape.hpp"
#include "ctlio/bench.hpp"
#include "ctlio/io.hpp"
#include "ctlio/jacobian_check.hpp"
#include "ctlio/pipeline.hpp"
#include "ctlio/worldsim.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ctlio;

namespace {

enum Exit : int {
  kOk = 0,
  kIoError = 1,
  kUsage = 2,
  kPipeline = 3,
  kNoOverlap = 4,
  kJacobian = 5,
  kInvalidData = 6,
};

struct Common {
  std::uint64_t seed = 1;
  int threads = 1;
  std::string config;
  std::string json_out;
};

void emit_json(const Common& c, const json& j) {
  if (c.json_out.empty()) return;
  std::ofstream out(c.json_out);
  if (!out) throw io::FormatError("cannot write " + c.json_out);
  out << j.dump(2) << '\n';
}

/// Defaults, then the config file, then --threads/--seed when given explicitly.
PipelineConfig load_config(const Common& c, const CLI::App& app, const std::vector<std::string>& overrides) {
  PipelineConfig cfg;
  std::string text;
  if (!c.config.empty()) text = io::read_text(c.config);
  for (const auto& kv : overrides) text += "\n" + kv;
  cfg.apply_text(text);
  if (app.count("--threads") > 0) cfg.threads = c.threads;
  if (app.count("--seed") > 0) cfg.seed = c.seed;
  cfg.validate();
  return cfg;
}

double mean_of(const std::vector<LoopRecord>& loops, double LoopRecord::*field) {
  if (loops.empty()) return 0.0;
  double s = 0.0;
  for (const auto& l : loops) s += l.*field;
  return s / static_cast<double>(loops.size());
}

void write_timing(const fs::path& p, const std::vector<LoopRecord>& loops) {
  std::ofstream out(p);
  if (!out) throw io::FormatError("cannot write " + p.string());
  out << io::kTimingHeader << '\n';
  for (const auto& l : loops) {
    out << l.loop_index << ',' << io::num(l.t_outer) << ',' << io::num(l.t_pda) << ',' << io::num(l.t_bsu) << ','
        << io::num(l.t_other) << ',' << io::num(l.t_fill) << ',' << io::num(l.t_solve) << ',' << l.report.iterations
        << '\n';
  }
}

int cmd_simulate(const Common& c, const std::string& preset, const std::string& out_dir, bool noise_free,
                 double duration) {
  Scenario sc;
  try {
    sc = make_preset(preset, noise_free);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  if (duration > 0.0) sc.duration = std::min(duration, sc.duration);
  const SimData d = simulate(sc, c.seed);
  std::vector<io::StampedPose> gt;
  gt.reserve(d.ground_truth.size());
  for (const auto& s : d.ground_truth) gt.push_back({s.t, s.pose});
  io::write_dataset(out_dir, d.imu, d.scans, gt);
  std::size_t points = 0;
  for (const auto& s : d.scans) points += s.points.size();
  std::cout << "simulated " << preset << ": " << d.scans.size() << " scans, " << points << " points, "
            << d.imu.size() << " imu samples -> " << out_dir << '\n';
  emit_json(c, {{"preset", preset},
                {"seed", c.seed},
                {"noise_free", noise_free},
                {"duration", sc.duration},
                {"scans", d.scans.size()},
                {"points", points},
                {"imu_samples", d.imu.size()}});
  return kOk;
}

int cmd_odometry(const Common& c, const PipelineConfig& cfg, const std::string& data_dir, const std::string& out_dir) {
  const io::Dataset data = io::read_dataset(data_dir);
  OdometryOutput out;
  try {
    out = run_odometry(cfg, data.imu, data.scans);
  } catch (const std::exception& e) {
    std::cerr << "pipeline error: " << e.what() << '\n';
    return kPipeline;
  }
  fs::create_directories(out_dir);
  io::write_tum(fs::path(out_dir) / "estimate.tum", out.poses);
  write_timing(fs::path(out_dir) / "timing.csv", out.loops);

  // The bootstrap record carries no solve; summaries cover solved loops only.
  std::vector<LoopRecord> solved(out.loops.begin() + 1, out.loops.end());
  int converged = 0, degenerate = 0, violations = 0, iters = 0;
  for (const auto& l : solved) {
    if (l.report.degenerate) ++degenerate;
    if (!l.report.iters.empty() && l.last_relative_decrease() < cfg.conv_tol) ++converged;
    violations += l.report.monotone_violations;
    iters += l.report.iterations;
  }
  const double n = std::max<double>(1.0, static_cast<double>(solved.size()));
  json rep = {{"loops", out.loops.size()},
              {"converged_loops", converged},
              {"degenerate_loops", degenerate},
              {"monotone_violations", violations},
              {"mean_inner_iters", iters / n},
              {"mean_t_outer", mean_of(solved, &LoopRecord::t_outer)},
              {"mean_t_pda", mean_of(solved, &LoopRecord::t_pda)},
              {"mean_t_bsu", mean_of(solved, &LoopRecord::t_bsu)},
              {"mean_t_other", mean_of(solved, &LoopRecord::t_other)},
              {"mean_t_fill", mean_of(solved, &LoopRecord::t_fill)},
              {"mean_t_solve", mean_of(solved, &LoopRecord::t_solve)},
              {"keyframes", out.keyframes},
              {"map_points", out.map_points},
              {"bias_gyro", {out.bias.gyro.x(), out.bias.gyro.y(), out.bias.gyro.z()}},
              {"bias_accel", {out.bias.accel.x(), out.bias.accel.y(), out.bias.accel.z()}},
              {"threads", cfg.threads},
              {"seed", cfg.seed}};
  const fs::path gt_path = fs::path(data_dir) / "ground_truth.tum";
  if (fs::exists(gt_path)) {
    try {
      const ApeResult ape = compute_ape(out.poses, io::read_tum(gt_path));
      rep["ape_rmse"] = ape.rmse;
      rep["ape_mean"] = ape.mean;
      rep["ape_max"] = ape.max;
      rep["ape_matched"] = ape.matched;
    } catch (const std::runtime_error& e) {
      rep["ape_error"] = e.what();
    }
  }
  {
    std::ofstream f(fs::path(out_dir) / "report.json");
    f << rep.dump(2) << '\n';
  }
  std::printf("loops %zu  converged %d  degenerate %d  mean t_outer %.2f ms (fill %.2f, solve %.2f)\n",
              out.loops.size(), converged, degenerate, 1e3 * rep["mean_t_outer"].get<double>(),
              1e3 * rep["mean_t_fill"].get<double>(), 1e3 * rep["mean_t_solve"].get<double>());
  if (rep.contains("ape_rmse")) std::printf("ape rmse %.6g m\n", rep["ape_rmse"].get<double>());
  emit_json(c, rep);
  return kOk;
}

int cmd_ape(const Common& c, const std::string& est, const std::string& gt, bool align, double max_dt) {
  ApeOptions opt;
  opt.align = align;
  opt.max_dt = max_dt;
  ApeResult r;
  try {
    r = compute_ape(io::read_tum(est), io::read_tum(gt), opt);
  } catch (const io::FormatError&) {
    throw;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNoOverlap;
  }
  std::printf("matched %zu\nrmse %.9g\nmean %.9g\nmax %.9g\n", r.matched, r.rmse, r.mean, r.max);
  emit_json(c, {{"matched", r.matched}, {"rmse", r.rmse}, {"mean", r.mean}, {"max", r.max}, {"aligned", align}});
  return kOk;
}

int cmd_check_jacobians(const Common& c, int trials, const std::string& inject) {
  JacobianCheckOptions opt;
  opt.seed = c.seed;
  opt.trials = trials;
  if (!inject.empty()) {
    BlockFamily fam;
    if (!parse_family(inject, fam)) {
      std::cerr << "error: unknown block family '" << inject << "'\n";
      return kUsage;
    }
    opt.inject_sign_flip = fam;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const JacobianCheckReport rep = check_jacobians(opt);
  const double secs = detail::seconds_since(t0);
  json j = {{"trials", trials}, {"seed", c.seed}, {"tolerance", opt.tolerance}, {"seconds", secs}};
  for (int k = 0; k < kNumBlockFamilies; ++k) {
    const auto fam = static_cast<BlockFamily>(k);
    const FamilyStat& s = rep.families[static_cast<std::size_t>(k)];
    const bool ok = s.max_rel_error < opt.tolerance && s.blocks_checked > 0;
    std::printf("%-10s max_rel_error %.3e  blocks %d  %s\n", std::string(family_name(fam)).c_str(), s.max_rel_error,
                s.blocks_checked, ok ? "ok" : "VIOLATION");
    if (!ok) std::printf("  offending instance seed %llu\n", static_cast<unsigned long long>(s.worst_instance_seed));
    j["families"][std::string(family_name(fam))] = {{"max_rel_error", s.max_rel_error},
                                                    {"blocks", s.blocks_checked},
                                                    {"worst_instance_seed", s.worst_instance_seed},
                                                    {"ok", ok}};
  }
  j["passed"] = rep.passed();
  std::printf("%d trials in %.2f s: %s\n", trials, secs, rep.passed() ? "pass" : "FAIL");
  emit_json(c, j);
  return rep.passed() ? kOk : kJacobian;
}

int cmd_bench(const Common& c, const std::string& mode, int max_threads, int reps) {
  const std::vector<int> sizes{1000, 4000, 8000};
  json j = {{"mode", mode}, {"seed", c.seed}};
  if (mode == "fill-scaling") {
    std::vector<int> counts;
    for (int t = 1; t < max_threads; t *= 2) counts.push_back(t);
    counts.push_back(max_threads);
    std::printf("%8s %8s %12s %12s\n", "factors", "threads", "fill_ms", "solve_ms");
    for (int n : sizes) {
      BenchFixtureOptions fo;
      fo.num_lidar = n;
      fo.seed = c.seed;
      const BenchFixture fx = make_bench_fixture(fo);
      for (int t : counts) {
        const ScalingRow r = time_fill_solve(fx, t, reps);
        std::printf("%8d %8d %12.3f %12.3f\n", n, t, 1e3 * r.t_fill, 1e3 * r.t_solve);
        j["rows"].push_back({{"factors", n}, {"threads", t}, {"t_fill", r.t_fill}, {"t_solve", r.t_solve}});
      }
    }
  } else if (mode == "solver-vs-nlsmimic") {
    PipelineConfig pc;
    InnerLoopConfig ic;
    ic.max_iters = pc.max_inner_iters;
    ic.conv_tol = pc.conv_tol;
    ic.damping = pc.damping;
    ic.threads = c.threads;
    std::printf("%8s %12s %6s %14s %12s %6s %14s %10s\n", "factors", "direct_ms", "iters", "direct_cost", "nls_ms",
                "iters", "nls_cost", "cost_gap");
    for (int n : sizes) {
      BenchFixtureOptions fo;
      fo.num_lidar = n;
      fo.seed = c.seed;
      const MimicResult m = compare_with_baseline(make_bench_fixture(fo), ic);
      std::printf("%8d %12.2f %6d %14.6g %12.2f %6d %14.6g %10.2e\n", n, 1e3 * m.direct_time, m.direct_iters,
                  m.direct_cost, 1e3 * m.baseline_time, m.baseline_iters, m.baseline_cost, m.cost_gap());
      j["rows"].push_back({{"factors", n},
                           {"direct_time", m.direct_time},
                           {"direct_iters", m.direct_iters},
                           {"direct_cost", m.direct_cost},
                           {"direct_iter_times", m.direct_iter_times},
                           {"baseline_time", m.baseline_time},
                           {"baseline_iters", m.baseline_iters},
                           {"baseline_cost", m.baseline_cost},
                           {"baseline_iter_times", m.baseline_iter_times},
                           {"cost_gap", m.cost_gap()}});
    }
  } else {
    std::cerr << "error: unknown bench mode '" << mode << "' (fill-scaling, solver-vs-nlsmimic)\n";
    return kUsage;
  }
  emit_json(c, j);
  return kOk;
}

int cmd_validate(const Common& c, const std::string& dir) {
  const std::vector<std::string> errs = io::validate_dataset(dir);
  for (const auto& e : errs) std::cout << e << '\n';
  std::cout << (errs.empty() ? "valid" : "invalid") << '\n';
  emit_json(c, {{"valid", errs.empty()}, {"errors", errs}});
  return errs.empty() ? kOk : kInvalidData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-time lidar-inertial odometry on B-spline trajectories"};
  app.require_subcommand(1);
  app.fallthrough();
  Common c;
  app.add_option("--seed", c.seed, "RNG seed");
  app.add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--config", c.config, "key = value pipeline config file")->check(CLI::ExistingFile);
  app.add_option("--json", c.json_out, "also write the JSON summary to this file");

  std::string preset, out_dir, data_dir, est, gt, mode = "fill-scaling", inject, validate_dir;
  bool noise_free = false, align = false;
  double duration = 0.0, max_dt = 0.01;
  int trials = 200, max_threads = 8, reps = 5;
  std::vector<std::string> overrides;

  auto* sim = app.add_subcommand("simulate", "write a synthetic dataset for a named scenario");
  sim->add_option("preset", preset, "room_slow, room_dynamic or corridor_degenerate")->required();
  sim->add_option("--out", out_dir, "output directory")->default_val("data");
  sim->add_flag("--noise-free", noise_free, "disable all sensor noise and IMU biases");
  sim->add_option("--duration", duration, "truncate the scenario to this many seconds");

  auto* odo = app.add_subcommand("odometry", "run the estimator on a dataset");
  PipelineConfig defaults;
  odo->footer("Config keys (defaults):\n" + defaults.help());
  odo->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  odo->add_option("--out", out_dir, "output directory")->default_val("out");
  odo->add_option("--set", overrides, "extra key=value config entries");

  auto* ape = app.add_subcommand("ape", "absolute position error between two TUM files");
  ape->add_option("estimate", est)->required()->check(CLI::ExistingFile);
  ape->add_option("truth", gt)->required()->check(CLI::ExistingFile);
  ape->add_flag("--align", align, "rigidly align the estimate first");
  ape->add_option("--max-dt", max_dt, "association window [s]")->default_val(0.01);

  auto* jac = app.add_subcommand("check-jacobians", "finite-difference check of every analytic Jacobian block");
  jac->add_option("--trials", trials, "random factor instances")->default_val(200)->check(CLI::PositiveNumber);
  jac->add_option("--inject-fault", inject, "test hook: sign-flip the analytic block of this family");

  auto* bench = app.add_subcommand("bench", "timing benchmarks");
  bench->add_option("mode", mode, "fill-scaling or solver-vs-nlsmimic")->default_val("fill-scaling");
  bench->add_option("--max-threads", max_threads, "largest thread count swept")->default_val(8)->check(
      CLI::PositiveNumber);
  bench->add_option("--reps", reps, "repetitions per measurement")->default_val(5)->check(CLI::PositiveNumber);

  auto* val = app.add_subcommand("validate", "schema check of a dataset directory");
  val->add_option("dir", validate_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*sim) return cmd_simulate(c, preset, out_dir, noise_free, duration);
    if (*odo) {
      PipelineConfig cfg;
      try {
        cfg = load_config(c, app, overrides);
      } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsage;
      }
      return cmd_odometry(c, cfg, data_dir, out_dir);
    }
    if (*ape) return cmd_ape(c, est, gt, align, max_dt);
    if (*jac) return cmd_check_jacobians(c, trials, inject);
    if (*bench) return cmd_bench(c, mode, max_threads, reps);
    if (*val) return cmd_validate(c, validate_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIoError;
  }
  return kUsage;
}
