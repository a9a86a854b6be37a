#pragma once

#include "fusionloc/core/types.hpp"
#include "fusionloc/geo/attitude.hpp"

#include <cmath>
#include <vector>

namespace fusionloc::map {

/// One LiDAR return in the sensor frame (RFU, meters; intensity 0..255).
struct ScanPoint {
  float x = 0.0F;
  float y = 0.0F;
  float z = 0.0F;
  float intensity = 0.0F;

  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(z) && std::isfinite(intensity);
  }
  friend bool operator==(const ScanPoint&, const ScanPoint&) = default;
};

struct Scan {
  double t = 0.0;
  std::vector<ScanPoint> points;
};

/// 6-DoF vehicle pose in the projected map frame. `alt` is the altitude of
/// the vehicle reference point, which sits on the road surface.
struct Pose6 {
  double x = 0.0;
  double y = 0.0;
  double alt = 0.0;
  double roll = 0.0;
  double pitch = 0.0;
  double heading = 0.0;

  Vec2 xy() const { return {x, y}; }
  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(alt) && std::isfinite(roll) && std::isfinite(pitch) &&
           std::isfinite(heading);
  }
};

/// How points are turned into cell statistics. The ground band keeps points
/// whose world altitude lies in [ground - band_below, ground + band_above],
/// where the ground estimate is the pose altitude.
struct RasterParams {
  double resolution = 0.125;
  double band_below = 2.0;
  double band_above = 0.5;
  double sensor_height = 0.0;  // sensor origin above the reference point
  double intensity_var_floor = 1.0;
  double altitude_var_floor = 0.0025;
};

/// Rigid transform from the sensor frame into the map frame.
class PoseTransform {
 public:
  explicit PoseTransform(const Pose6& pose, double sensor_height = 0.0)
      : rot_(geo::dcm_from_euler({pose.roll, pose.pitch, pose.heading})),
        trans_(pose.x, pose.y, pose.alt + sensor_height) {}

  Vec3 apply(const ScanPoint& p) const { return rot_ * Vec3(p.x, p.y, p.z) + trans_; }
  Vec3 apply(const Vec3& p) const { return rot_ * p + trans_; }
  Vec3 inverse(const Vec3& w) const { return rot_.transpose() * (w - trans_); }

 private:
  Mat3 rot_;
  Vec3 trans_;
};

inline bool in_ground_band(double z_world, double ground, const RasterParams& params) {
  const double dz = z_world - ground;
  return dz >= -params.band_below && dz <= params.band_above;
}

}  // namespace fusionloc::map
