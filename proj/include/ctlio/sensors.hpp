#pragma once

// Raw sensor records shared by the simulator, file IO and the pipeline.

#include "ctlio/so3.hpp"

#include <vector>

namespace ctlio {

struct ImuSample {
  double t = 0.0;
  Vec3 gyro = Vec3::Zero();   // rad/s, body frame
  Vec3 accel = Vec3::Zero();  // m/s², specific force in body frame
};

/// One lidar return in the body frame at its own timestamp.
struct LidarPoint {
  double t = 0.0;
  Vec3 p = Vec3::Zero();
};

/// A scan as stored on disk: span [t_start, t_end) and its points.
struct Scan {
  int index = 0;
  double t_start = 0.0;
  double t_end = 0.0;
  std::vector<LidarPoint> points;
};

/// Points and IMU samples of one synchronization interval [t_a, t_b).
struct RawBundle {
  int index = 0;
  double t_a = 0.0;
  double t_b = 0.0;
  std::vector<LidarPoint> points;
  std::vector<ImuSample> imu;
  bool dropout = false;  // preceded by a gap of more than two steps without data
};

}  // namespace ctlio
