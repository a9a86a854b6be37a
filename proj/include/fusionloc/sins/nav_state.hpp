#pragma once

#include "fusionloc/core/types.hpp"
#include "fusionloc/geo/attitude.hpp"
#include "fusionloc/geo/earth.hpp"

namespace fusionloc::sins {

/// Navigation state. Position is geodetic (lon, lat rad; alt m), velocity is
/// ENU, q_b_n rotates body (RFU) vectors into the navigation frame.
struct NavState {
  double t = 0.0;
  Vec3 r = Vec3::Zero();
  Vec3 v_n = Vec3::Zero();
  Quat q_b_n = Quat::Identity();
  Vec3 b_a = Vec3::Zero();
  Vec3 b_g = Vec3::Zero();

  Mat3 c_b_n() const { return q_b_n.toRotationMatrix(); }
  geo::Euler euler() const { return geo::euler_from_dcm(c_b_n()); }
  double heading() const { return geo::heading_from_dcm(c_b_n()); }
  bool finite() const {
    return std::isfinite(t) && r.allFinite() && v_n.allFinite() && q_b_n.coeffs().allFinite() && b_a.allFinite() &&
           b_g.allFinite();
  }
};

/// One IMU output. The values are averages over the interval that ends at t
/// (what an integrating sensor delivers), in the RFU body frame.
struct ImuSample {
  double t = 0.0;
  Vec3 omega_ib_b = Vec3::Zero();
  Vec3 f_b = Vec3::Zero();

  bool finite() const { return std::isfinite(t) && omega_ib_b.allFinite() && f_b.allFinite(); }
};

/// Local north/east/up metric offset of r from ref (small separations).
inline Vec3 position_delta_m(const Vec3& r, const Vec3& ref) {
  const double rn = geo::radius_transverse(ref.y()), rm = geo::radius_meridian(ref.y());
  return {wrap_angle(r.x() - ref.x()) * (rn + ref.z()) * std::cos(ref.y()), (r.y() - ref.y()) * (rm + ref.z()),
          r.z() - ref.z()};
}

/// Diagonal of R_c^{-1}: meters per (rad lon, rad lat, m alt).
inline Vec3 meters_per_unit(const Vec3& r) {
  return {(geo::radius_transverse(r.y()) + r.z()) * std::cos(r.y()), geo::radius_meridian(r.y()) + r.z(), 1.0};
}

}  // namespace fusionloc::sins
