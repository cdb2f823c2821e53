#pragma once

// On-disk formats: imu.csv, scans/scan_<index>.csv + manifest.csv, TUM
// trajectories and flat key = value configuration text.
//
// Numbers are written with %.17g so every double round-trips exactly and
// files are byte-identical for identical inputs.

#include "ctlio/sensors.hpp"
#include "ctlio/so3.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ctlio::io {

inline constexpr std::string_view kImuHeader = "t,wx,wy,wz,ax,ay,az";
inline constexpr std::string_view kScanHeader = "t,x,y,z";
inline constexpr std::string_view kManifestHeader = "index,t_start,t_end,points,file";
inline constexpr std::string_view kTimingHeader = "loop_index,t_outer,t_pda,t_bsu,t_other,t_fill,t_solve,inner_iters";

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StampedPose {
  double t = 0.0;
  Pose pose;
};

struct ManifestEntry {
  int index = 0;
  double t_start = 0.0;
  double t_end = 0.0;
  std::size_t points = 0;
  std::string file;  // relative to the dataset directory
};

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string scan_file_name(int index) { return "scans/scan_" + std::to_string(index) + ".csv"; }

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const std::size_t b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

inline double parse_double(std::string_view s, const std::string& where) {
  const std::string tmp(trim(s));
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(tmp.c_str(), &end);
  if (tmp.empty() || end != tmp.c_str() + tmp.size() || errno == ERANGE) {
    throw FormatError(where + ": not a number '" + tmp + "'");
  }
  return v;
}

inline long parse_int(std::string_view s, const std::string& where) {
  const std::string tmp(trim(s));
  char* end = nullptr;
  errno = 0;
  const long v = std::strtol(tmp.c_str(), &end, 10);
  if (tmp.empty() || end != tmp.c_str() + tmp.size() || errno == ERANGE) {
    throw FormatError(where + ": not an integer '" + tmp + "'");
  }
  return v;
}

inline std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw FormatError("cannot open " + p.string());
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw FormatError("cannot write " + p.string());
  return out;
}

/// Rows of a CSV whose first line must equal `header`; each row must have
/// `cols` numeric fields.
inline std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& p, std::string_view header,
                                                         std::size_t cols) {
  std::ifstream in = open_in(p);
  std::string line;
  if (!std::getline(in, line) || trim(line) != header) {
    throw FormatError(p.string() + ": expected header '" + std::string(header) + "'");
  }
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    const std::string where = p.string() + ":" + std::to_string(lineno);
    if (f.size() != cols) throw FormatError(where + ": expected " + std::to_string(cols) + " fields");
    std::vector<double> row;
    row.reserve(cols);
    for (auto s : f) row.push_back(parse_double(s, where));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

inline void write_imu(const std::filesystem::path& p, const std::vector<ImuSample>& imu) {
  auto out = detail::open_out(p);
  out << kImuHeader << '\n';
  for (const auto& s : imu) {
    out << num(s.t) << ',' << num(s.gyro.x()) << ',' << num(s.gyro.y()) << ',' << num(s.gyro.z()) << ','
        << num(s.accel.x()) << ',' << num(s.accel.y()) << ',' << num(s.accel.z()) << '\n';
  }
}

inline std::vector<ImuSample> read_imu(const std::filesystem::path& p) {
  std::vector<ImuSample> out;
  for (const auto& r : detail::read_numeric_csv(p, kImuHeader, 7)) {
    out.push_back({r[0], Vec3(r[1], r[2], r[3]), Vec3(r[4], r[5], r[6])});
  }
  return out;
}

inline void write_scan(const std::filesystem::path& p, const std::vector<LidarPoint>& pts) {
  auto out = detail::open_out(p);
  out << kScanHeader << '\n';
  for (const auto& q : pts) out << num(q.t) << ',' << num(q.p.x()) << ',' << num(q.p.y()) << ',' << num(q.p.z()) << '\n';
}

inline std::vector<LidarPoint> read_scan(const std::filesystem::path& p) {
  std::vector<LidarPoint> out;
  for (const auto& r : detail::read_numeric_csv(p, kScanHeader, 4)) out.push_back({r[0], Vec3(r[1], r[2], r[3])});
  return out;
}

inline void write_manifest(const std::filesystem::path& p, const std::vector<ManifestEntry>& entries) {
  auto out = detail::open_out(p);
  out << kManifestHeader << '\n';
  for (const auto& e : entries) {
    out << e.index << ',' << num(e.t_start) << ',' << num(e.t_end) << ',' << e.points << ',' << e.file << '\n';
  }
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& p) {
  std::ifstream in = detail::open_in(p);
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != kManifestHeader) {
    throw FormatError(p.string() + ": expected header '" + std::string(kManifestHeader) + "'");
  }
  std::vector<ManifestEntry> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const std::string where = p.string() + ":" + std::to_string(lineno);
    const auto f = detail::split(detail::trim(line), ',');
    if (f.size() != 5) throw FormatError(where + ": expected 5 fields");
    ManifestEntry e;
    e.index = static_cast<int>(detail::parse_int(f[0], where));
    e.t_start = detail::parse_double(f[1], where);
    e.t_end = detail::parse_double(f[2], where);
    const long n = detail::parse_int(f[3], where);
    if (n < 0) throw FormatError(where + ": negative point count");
    e.points = static_cast<std::size_t>(n);
    e.file = std::string(detail::trim(f[4]));
    out.push_back(std::move(e));
  }
  return out;
}

/// `t x y z qx qy qz qw`, one pose per line.
inline void write_tum(const std::filesystem::path& p, const std::vector<StampedPose>& traj) {
  auto out = detail::open_out(p);
  for (const auto& s : traj) {
    const Eigen::Quaterniond q = s.pose.rot.quaternion();
    out << num(s.t) << ' ' << num(s.pose.pos.x()) << ' ' << num(s.pose.pos.y()) << ' ' << num(s.pose.pos.z()) << ' '
        << num(q.x()) << ' ' << num(q.y()) << ' ' << num(q.z()) << ' ' << num(q.w()) << '\n';
  }
}

/// Reads a TUM file; '#' lines are comments. Quaternions must be unit within 1e-6.
inline std::vector<StampedPose> read_tum(const std::filesystem::path& p) {
  std::ifstream in = detail::open_in(p);
  std::vector<StampedPose> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const std::string where = p.string() + ":" + std::to_string(lineno);
    std::vector<double> v;
    std::istringstream ss{std::string(t)};
    std::string tok;
    while (ss >> tok) v.push_back(detail::parse_double(tok, where));
    if (v.size() != 8) throw FormatError(where + ": expected 8 fields");
    const Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    if (std::abs(q.norm() - 1.0) > 1e-6) throw FormatError(where + ": quaternion not unit");
    if (!out.empty() && !(v[0] > out.back().t)) throw FormatError(where + ": timestamps not strictly increasing");
    out.push_back({v[0], Pose(Rot3(q), Vec3(v[1], v[2], v[3]))});
  }
  return out;
}

/// Flat `key = value` lines; '#' starts a comment. Duplicate keys are an error.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::map<std::string, int> seen;
  int lineno = 0;
  for (auto line : detail::split(text, '\n')) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    const std::string where = "config line " + std::to_string(lineno);
    if (eq == std::string_view::npos) throw FormatError(where + ": expected key = value");
    std::string key(detail::trim(line.substr(0, eq)));
    std::string value(detail::trim(line.substr(eq + 1)));
    if (key.empty() || value.empty()) throw FormatError(where + ": empty key or value");
    if (seen.count(key) != 0) throw FormatError(where + ": duplicate key '" + key + "'");
    seen[key] = lineno;
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in = detail::open_in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Dataset {
  std::vector<ImuSample> imu;
  std::vector<Scan> scans;
};

inline void write_dataset(const std::filesystem::path& dir, const std::vector<ImuSample>& imu,
                          const std::vector<Scan>& scans, const std::vector<StampedPose>& ground_truth) {
  std::filesystem::create_directories(dir / "scans");
  write_imu(dir / "imu.csv", imu);
  std::vector<ManifestEntry> entries;
  for (const Scan& s : scans) {
    const std::string file = scan_file_name(s.index);
    write_scan(dir / file, s.points);
    entries.push_back({s.index, s.t_start, s.t_end, s.points.size(), file});
  }
  write_manifest(dir / "manifest.csv", entries);
  write_tum(dir / "ground_truth.tum", ground_truth);
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.imu = read_imu(dir / "imu.csv");
  for (const ManifestEntry& e : read_manifest(dir / "manifest.csv")) {
    Scan s;
    s.index = e.index;
    s.t_start = e.t_start;
    s.t_end = e.t_end;
    s.points = read_scan(dir / e.file);
    if (s.points.size() != e.points) {
      throw FormatError(e.file + ": manifest lists " + std::to_string(e.points) + " points, file has " +
                        std::to_string(s.points.size()));
    }
    d.scans.push_back(std::move(s));
  }
  return d;
}

/// Schema check of a dataset directory. Returns one message per problem.
inline std::vector<std::string> validate_dataset(const std::filesystem::path& dir) {
  std::vector<std::string> errs;
  Dataset d;
  try {
    d = read_dataset(dir);
  } catch (const std::exception& e) {
    errs.emplace_back(e.what());
    return errs;
  }
  for (std::size_t k = 1; k < d.imu.size(); ++k) {
    if (!(d.imu[k].t > d.imu[k - 1].t)) {
      errs.push_back("imu.csv: timestamps not strictly increasing at row " + std::to_string(k + 1));
      break;
    }
  }
  for (std::size_t k = 0; k < d.scans.size(); ++k) {
    const Scan& s = d.scans[k];
    const std::string name = scan_file_name(s.index);
    if (!(s.t_end > s.t_start)) errs.push_back(name + ": empty span");
    if (k > 0 && !(s.t_start >= d.scans[k - 1].t_end)) errs.push_back(name + ": span overlaps previous scan");
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      const double t = s.points[i].t;
      if (t < s.t_start || t >= s.t_end) {
        errs.push_back(name + ": point " + std::to_string(i) + " outside [t_start, t_end)");
        break;
      }
      if (i > 0 && t < s.points[i - 1].t) {
        errs.push_back(name + ": timestamps not sorted");
        break;
      }
    }
  }
  const auto gt_path = dir / "ground_truth.tum";
  if (std::filesystem::exists(gt_path)) {
    try {
      read_tum(gt_path);
    } catch (const std::exception& e) {
      errs.emplace_back(e.what());
    }
  }
  return errs;
}

}  // namespace ctlio::io
