#include "ctlio/io.hpp"

#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>

using namespace ctlio;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ctlio_io_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string l;
  std::getline(in, l);
  return l;
}

}  // namespace

TEST(Formats, HeadersArePinned) {
  EXPECT_EQ(io::kImuHeader, "t,wx,wy,wz,ax,ay,az");
  EXPECT_EQ(io::kScanHeader, "t,x,y,z");
  EXPECT_EQ(io::kManifestHeader, "index,t_start,t_end,points,file");
  EXPECT_EQ(io::kTimingHeader, "loop_index,t_outer,t_pda,t_bsu,t_other,t_fill,t_solve,inner_iters");
  EXPECT_EQ(io::scan_file_name(12), "scans/scan_12.csv");
}

TEST(Formats, ImuRoundTripIsExact) {
  const fs::path d = temp_dir("imu");
  std::vector<ImuSample> imu{{0.0025, Vec3(0.1, 1.0 / 3.0, -2e-17), Vec3(9.81, 0.0, -1e300)},
                             {0.005, Vec3(1, 2, 3), Vec3(4, 5, 6)}};
  io::write_imu(d / "imu.csv", imu);
  EXPECT_EQ(first_line(d / "imu.csv"), io::kImuHeader);
  const auto back = io::read_imu(d / "imu.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].t, imu[0].t);
  EXPECT_EQ(back[0].gyro, imu[0].gyro);
  EXPECT_EQ(back[0].accel, imu[0].accel);
  fs::remove_all(d);
}

TEST(Formats, DatasetRoundTripAndValidation) {
  const fs::path d = temp_dir("dataset");
  std::vector<ImuSample> imu{{0.0, Vec3::Zero(), Vec3(0, 0, 9.81)}, {0.05, Vec3::Zero(), Vec3(0, 0, 9.81)}};
  std::vector<Scan> scans(2);
  scans[0] = {0, 0.0, 0.1, {{0.0, Vec3(1, 2, 3)}, {0.05, Vec3(4, 5, 6)}}};
  scans[1] = {1, 0.1, 0.2, {{0.1, Vec3(7, 8, 9)}}};
  std::vector<io::StampedPose> gt{{0.0, Pose()}, {0.1, Pose(Rot3::exp(Vec3(0, 0, 1)), Vec3(1, 0, 0))}};
  io::write_dataset(d, imu, scans, gt);
  EXPECT_EQ(first_line(d / "manifest.csv"), io::kManifestHeader);
  EXPECT_EQ(first_line(d / "scans/scan_1.csv"), io::kScanHeader);
  EXPECT_TRUE(io::validate_dataset(d).empty());
  const io::Dataset back = io::read_dataset(d);
  ASSERT_EQ(back.scans.size(), 2u);
  EXPECT_EQ(back.scans[0].points[1].p, Vec3(4, 5, 6));
  const auto tum = io::read_tum(d / "ground_truth.tum");
  ASSERT_EQ(tum.size(), 2u);
  EXPECT_LT((tum[1].pose.rot.matrix() - gt[1].pose.rot.matrix()).norm(), 1e-15);

  // A point outside its scan span is reported.
  io::write_scan(d / "scans/scan_1.csv", {{0.25, Vec3(7, 8, 9)}});
  const auto errs = io::validate_dataset(d);
  ASSERT_EQ(errs.size(), 1u);
  EXPECT_NE(errs[0].find("outside"), std::string::npos);

  // A manifest count that disagrees with the file is fatal.
  io::write_scan(d / "scans/scan_1.csv", {});
  EXPECT_THROW(io::read_dataset(d), io::FormatError);
  fs::remove_all(d);
}

TEST(Formats, BadHeaderAndBadNumbersAreRejected) {
  const fs::path d = temp_dir("bad");
  {
    std::ofstream(d / "imu.csv") << "t,gx,gy,gz,ax,ay,az\n";
  }
  EXPECT_THROW(io::read_imu(d / "imu.csv"), io::FormatError);
  {
    std::ofstream(d / "scan.csv") << "t,x,y,z\n0.1,1,2,abc\n";
  }
  EXPECT_THROW(io::read_scan(d / "scan.csv"), io::FormatError);
  {
    std::ofstream(d / "a.tum") << "0 0 0 0 0 0 0 2\n";
  }
  EXPECT_THROW(io::read_tum(d / "a.tum"), io::FormatError);
  {
    std::ofstream(d / "b.tum") << "1 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n";
  }
  EXPECT_THROW(io::read_tum(d / "b.tum"), io::FormatError);
  fs::remove_all(d);
}

TEST(Formats, KeyValueText) {
  const auto kv = io::parse_key_values("# comment\nknot_length = 0.01\n\nthreads=4   # trailing\n");
  ASSERT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv[0], std::make_pair(std::string("knot_length"), std::string("0.01")));
  EXPECT_EQ(kv[1].second, "4");
  EXPECT_THROW(io::parse_key_values("a = 1\na = 2\n"), io::FormatError);
  EXPECT_THROW(io::parse_key_values("just_a_key\n"), io::FormatError);
  EXPECT_THROW(io::parse_key_values("a =\n"), io::FormatError);
}
