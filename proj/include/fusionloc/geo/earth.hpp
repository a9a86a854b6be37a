#pragma once

#include "fusionloc/core/types.hpp"

#include <cmath>

namespace fusionloc::geo {

/// WGS-84 ellipsoid and Earth rotation constants.
namespace wgs84 {
inline constexpr double a = 6378137.0;
inline constexpr double f = 1.0 / 298.257223563;
inline constexpr double b = a * (1.0 - f);
inline constexpr double e2 = f * (2.0 - f);
inline constexpr double omega_ie = 7.292115e-5;
inline constexpr double gm = 3.986004418e14;
// Somigliana normal gravity coefficients.
inline constexpr double gamma_e = 9.7803253359;
inline constexpr double somigliana_k = 0.00193185265241;
}  // namespace wgs84

inline constexpr double kStandardGravity = 9.80665;
inline constexpr double kSpeedOfLight = 299792458.0;

/// Geodetic position (longitude, latitude in radians; altitude in meters).
struct Geodetic {
  double lon = 0.0;
  double lat = 0.0;
  double alt = 0.0;

  Vec3 vec() const { return {lon, lat, alt}; }
  static Geodetic from(const Vec3& r) { return {r.x(), r.y(), r.z()}; }
};

/// Selects the Earth model used by mechanization and the error model.
/// `flat` freezes the radii at the reference point and removes Earth rate,
/// transport rate and gravity variation, for small-area unit tests.
struct EarthModel {
  enum class Kind { wgs84, flat };
  Kind kind = Kind::wgs84;
  double ref_lat = 0.0;
  double ref_alt = 0.0;

  static EarthModel wgs84_model() { return {}; }
  static EarthModel flat_model(double ref_lat, double ref_alt = 0.0) { return {Kind::flat, ref_lat, ref_alt}; }
  bool is_flat() const { return kind == Kind::flat; }
};

/// Transverse (prime vertical) radius of curvature.
inline double radius_transverse(double lat) {
  const double s = std::sin(lat);
  return wgs84::a / std::sqrt(1.0 - wgs84::e2 * s * s);
}

/// Meridian radius of curvature.
inline double radius_meridian(double lat) {
  const double s = std::sin(lat);
  const double w = 1.0 - wgs84::e2 * s * s;
  return wgs84::a * (1.0 - wgs84::e2) / (w * std::sqrt(w));
}

inline double radius_transverse_dlat(double lat) {
  const double s = std::sin(lat);
  const double w = 1.0 - wgs84::e2 * s * s;
  return wgs84::a * wgs84::e2 * s * std::cos(lat) / (w * std::sqrt(w));
}

inline double radius_meridian_dlat(double lat) {
  const double s = std::sin(lat);
  const double w = 1.0 - wgs84::e2 * s * s;
  return 3.0 * wgs84::a * (1.0 - wgs84::e2) * wgs84::e2 * s * std::cos(lat) / (w * w * std::sqrt(w));
}

/// Normal gravity magnitude: Somigliana on the ellipsoid with the
/// second-order free-air height correction.
inline double normal_gravity(double lat, double alt) {
  const double s2 = square(std::sin(lat));
  const double g0 = wgs84::gamma_e * (1.0 + wgs84::somigliana_k * s2) / std::sqrt(1.0 - wgs84::e2 * s2);
  const double m = square(wgs84::omega_ie) * wgs84::a * wgs84::a * wgs84::b / wgs84::gm;
  return g0 * (1.0 - 2.0 / wgs84::a * (1.0 + wgs84::f + m - 2.0 * wgs84::f * s2) * alt + 3.0 / square(wgs84::a) * alt * alt);
}

struct EarthParams {
  Vec3 omega_ie_n = Vec3::Zero();
  Vec3 omega_en_n = Vec3::Zero();
  Vec3 g_n = Vec3::Zero();
  double rn = 0.0;  // transverse radius
  double rm = 0.0;  // meridian radius
  Mat3 rc = Mat3::Identity();

  Vec3 omega_in_n() const { return omega_ie_n + omega_en_n; }
};

/// Earth-related quantities at position r = (lon, lat, alt) moving with ENU
/// velocity v_n.
inline EarthParams earth_params(const Vec3& r, const Vec3& v_n, const EarthModel& model = {}) {
  const double lat = model.is_flat() ? model.ref_lat : r.y();
  if (std::abs(lat) > kPi / 2.0 - 1e-6) fail(ErrorKind::numerical, "polar singularity");
  EarthParams p;
  p.rn = radius_transverse(lat);
  p.rm = radius_meridian(lat);
  const double alt = model.is_flat() ? model.ref_alt : r.z();
  const double cl = std::cos(lat);
  p.rc = Vec3(1.0 / ((p.rn + alt) * cl), 1.0 / (p.rm + alt), 1.0).asDiagonal();
  if (model.is_flat()) {
    p.g_n = Vec3(0.0, 0.0, -kStandardGravity);
    return p;
  }
  const double sl = std::sin(lat);
  p.omega_ie_n = Vec3(0.0, wgs84::omega_ie * cl, wgs84::omega_ie * sl);
  p.omega_en_n = Vec3(-v_n.y() / (p.rm + alt), v_n.x() / (p.rn + alt), v_n.x() * sl / cl / (p.rn + alt));
  p.g_n = Vec3(0.0, 0.0, -normal_gravity(lat, alt));
  return p;
}

inline Vec3 geodetic_to_ecef(const Geodetic& g) {
  const double rn = radius_transverse(g.lat);
  const double cl = std::cos(g.lat);
  return {(rn + g.alt) * cl * std::cos(g.lon), (rn + g.alt) * cl * std::sin(g.lon),
          (rn * (1.0 - wgs84::e2) + g.alt) * std::sin(g.lat)};
}

inline Geodetic ecef_to_geodetic(const Vec3& x) {
  const double p = std::hypot(x.x(), x.y());
  Geodetic g;
  g.lon = std::atan2(x.y(), x.x());
  double lat = std::atan2(x.z(), p * (1.0 - wgs84::e2));
  double alt = 0.0;
  for (int i = 0; i < 10; ++i) {
    const double rn = radius_transverse(lat);
    alt = p / std::cos(lat) - rn;
    const double next = std::atan2(x.z(), p * (1.0 - wgs84::e2 * rn / (rn + alt)));
    const bool done = std::abs(next - lat) < 1e-15;
    lat = next;
    if (done) break;
  }
  const double rn = radius_transverse(lat);
  alt = p / std::cos(lat) - rn;
  g.lat = lat;
  g.alt = alt;
  return g;
}

/// Rotation taking ECEF vectors into the local ENU frame at (lon, lat).
inline Mat3 ecef_to_enu_rotation(double lon, double lat) {
  const double sl = std::sin(lon), cl = std::cos(lon), sp = std::sin(lat), cp = std::cos(lat);
  Mat3 r;
  r << -sl, cl, 0.0, -sp * cl, -sp * sl, cp, cp * cl, cp * sl, sp;
  return r;
}

/// Equirectangular projection about a fixed origin. Meridians map to lines of
/// constant x, so the grid has no convergence angle; it is conformal at the
/// origin and the scale error stays below 1e-4 over a few kilometers, which
/// is what the tiled map and the simulator need.
class LocalProjection {
 public:
  LocalProjection() = default;
  explicit LocalProjection(const Geodetic& origin)
      : origin_(origin),
        sx_((radius_transverse(origin.lat) + origin.alt) * std::cos(origin.lat)),
        sy_(radius_meridian(origin.lat) + origin.alt) {}

  const Geodetic& origin() const { return origin_; }
  double scale_x() const { return sx_; }  // meters per radian of longitude
  double scale_y() const { return sy_; }  // meters per radian of latitude

  Vec2 forward(double lon, double lat) const { return {(lon - origin_.lon) * sx_, (lat - origin_.lat) * sy_}; }
  Vec2 forward(const Vec3& r) const { return forward(r.x(), r.y()); }
  Vec3 inverse(const Vec2& xy, double alt) const {
    return {origin_.lon + xy.x() / sx_, origin_.lat + xy.y() / sy_, alt};
  }
  // d(lon,lat)/d(x,y)
  Mat2 inverse_jacobian() const { return Vec2(1.0 / sx_, 1.0 / sy_).asDiagonal(); }

 private:
  Geodetic origin_{};
  double sx_ = 1.0;
  double sy_ = 1.0;
};

}  // namespace fusionloc::geo
