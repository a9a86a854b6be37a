#pragma once

#include "fusionloc/core/types.hpp"

#include <algorithm>
#include <cmath>

namespace fusionloc::geo {

// Frames: navigation frame is ENU, body frame is RFU (x right, y forward,
// z up). Heading is the azimuth of the forward axis, clockwise from north,
// so the forward axis points along (sin h, cos h, 0) in ENU for a level
// vehicle. Pitch rotates about body x (nose up positive), roll about body y
// (right side down positive). C_b^n = Rz(-h) * Rx(pitch) * Ry(roll).

struct Euler {
  double roll = 0.0;
  double pitch = 0.0;
  double heading = 0.0;
};

inline Mat3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << 1, 0, 0, 0, c, -s, 0, s, c;
  return m;
}

inline Mat3 rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, 0, s, 0, 1, 0, -s, 0, c;
  return m;
}

inline Mat3 rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, -s, 0, s, c, 0, 0, 0, 1;
  return m;
}

inline Mat3 dcm_from_euler(const Euler& e) { return rot_z(-e.heading) * rot_x(e.pitch) * rot_y(e.roll); }

inline double heading_from_dcm(const Mat3& c) { return std::atan2(c(0, 1), c(1, 1)); }

inline Euler euler_from_dcm(const Mat3& c) {
  Euler e;
  e.pitch = std::asin(std::clamp(c(2, 1), -1.0, 1.0));
  e.roll = std::atan2(-c(2, 0), c(2, 2));
  e.heading = heading_from_dcm(c);
  return e;
}

inline Quat quat_from_euler(const Euler& e) { return Quat(dcm_from_euler(e)).normalized(); }

/// Unit quaternion of a rotation vector: exp([0, phi/2]).
inline Quat quat_exp(const Vec3& phi) {
  const double angle = phi.norm();
  if (angle < 1e-12) {
    Quat q(1.0, 0.5 * phi.x(), 0.5 * phi.y(), 0.5 * phi.z());
    return q.normalized();
  }
  const Vec3 axis = phi / angle;
  const double s = std::sin(0.5 * angle);
  return Quat(std::cos(0.5 * angle), s * axis.x(), s * axis.y(), s * axis.z());
}

/// Planar rotation of body (right, forward) coordinates into (east, north)
/// for heading h.
inline Mat2 heading_rotation(double h) {
  const double c = std::cos(h), s = std::sin(h);
  Mat2 m;
  m << c, s, -s, c;
  return m;
}

}  // namespace fusionloc::geo
