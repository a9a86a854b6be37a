#pragma once

#include "fusionloc/core/rng.hpp"
#include "fusionloc/map/point_cloud.hpp"
#include "fusionloc/sim/scenario.hpp"
#include "fusionloc/sins/nav_state.hpp"

#include <algorithm>
#include <array>
#include <vector>

namespace fusionloc::sim {

namespace detail {

// 8-point Gauss-Legendre rule on [-1, 1].
inline constexpr std::array<double, 8> kGlX{-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                            -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                            0.7966664774136267,  0.9602898564975363};
inline constexpr std::array<double, 8> kGlW{0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                            0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                            0.2223810344533745, 0.1012285362903763};

inline Mat3 drot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << 0, 0, 0, 0, -s, -c, 0, c, -s;
  return m;
}

inline Mat3 drot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << -s, -c, 0, c, -s, 0, 0, 0, 0;
  return m;
}

inline Vec3 vee(const Mat3& m) { return {0.5 * (m(2, 1) - m(1, 2)), 0.5 * (m(0, 2) - m(2, 0)), 0.5 * (m(1, 0) - m(0, 1))}; }

}  // namespace detail

/// Position relative to the path: arc length and signed lateral offset
/// (positive to the right of the direction of travel).
struct PathCoord {
  double s = 0.0;
  double d = 0.0;
};

/// Planar path built from pieces of linearly varying curvature, so heading
/// is piecewise quadratic and curvature continuous. Heading is clockwise
/// from north; the tangent is (sin h, cos h).
class Path {
 public:
  Path() = default;
  explicit Path(const TrajectorySpec& spec) {
    double s = 0.0, h = spec.start_heading, k = 0.0;
    Vec2 p = spec.start;
    for (const auto& seg : spec.segments) {
      Piece pc{s, seg.length, k, seg.curvature, h, p};
      pieces_.push_back(pc);
      const int n = std::max(1, static_cast<int>(std::ceil(seg.length / kKnotSpacing)));
      for (int i = 0; i < n; ++i) {
        const double a = s + seg.length * i / n;
        knots_.push_back({a, p});
        p = p + integrate(pc, a, s + seg.length * (i + 1) / n);
      }
      s += seg.length;
      h = heading_in(pc, s);
      k = seg.curvature;
    }
    knots_.push_back({s, p});
    length_ = s;
    end_heading_ = h;
  }

  double length() const { return length_; }

  double curvature(double s) const {
    if (s <= 0.0) return 0.0;
    if (s >= length_) return pieces_.back().k1;
    const Piece& pc = piece(s);
    return pc.k0 + (pc.k1 - pc.k0) * (s - pc.s0) / pc.length;
  }

  double heading(double s) const {
    if (s <= 0.0) return pieces_.front().h0;
    if (s >= length_) return end_heading_;
    return heading_in(piece(s), s);
  }

  /// Straight extension before the start and after the end.
  Vec2 position(double s) const {
    if (s <= 0.0) return knots_.front().p + s * tangent(0.0);
    if (s >= length_) return knots_.back().p + (s - length_) * tangent(length_);
    auto it = std::upper_bound(knots_.begin(), knots_.end(), s, [](double v, const Knot& k) { return v < k.s; });
    const Knot& kn = *(it - 1);
    return kn.p + integrate(piece(kn.s), kn.s, s);
  }

  Vec2 tangent(double s) const {
    const double h = heading(s);
    return {std::sin(h), std::cos(h)};
  }
  Vec2 right_normal(double s) const {
    const double h = heading(s);
    return {std::cos(h), -std::sin(h)};
  }

  /// Closest-point projection by Newton iteration from `s_guess`.
  PathCoord project(const Vec2& p, double s_guess) const {
    double s = s_guess;
    for (int it = 0; it < 6; ++it) {
      const Vec2 q = p - position(s);
      const double ds = q.dot(tangent(s)) / std::max(0.1, 1.0 - curvature(s) * q.dot(right_normal(s)));
      s += ds;
      if (std::abs(ds) < 1e-9) break;
    }
    return {s, (p - position(s)).dot(right_normal(s))};
  }

 private:
  static constexpr double kKnotSpacing = 5.0;

  struct Piece {
    double s0, length, k0, k1, h0;
    Vec2 p0;
  };
  struct Knot {
    double s;
    Vec2 p;
  };

  static double heading_in(const Piece& pc, double s) {
    const double u = s - pc.s0;
    return pc.h0 + pc.k0 * u + 0.5 * (pc.k1 - pc.k0) / pc.length * u * u;
  }

  static Vec2 integrate(const Piece& pc, double a, double b) {
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    Vec2 acc = Vec2::Zero();
    for (std::size_t i = 0; i < detail::kGlX.size(); ++i) {
      const double h = heading_in(pc, mid + half * detail::kGlX[i]);
      acc += detail::kGlW[i] * Vec2(std::sin(h), std::cos(h));
    }
    return half * acc;
  }

  const Piece& piece(double s) const {
    auto it = std::upper_bound(pieces_.begin(), pieces_.end(), s, [](double v, const Piece& p) { return v < p.s0; });
    return *(it == pieces_.begin() ? it : it - 1);
  }

  std::vector<Piece> pieces_;
  std::vector<Knot> knots_;
  double length_ = 0.0;
  double end_heading_ = 0.0;
};

/// Smooth road-surface altitude: origin altitude plus a few long sinusoids.
class Terrain {
 public:
  Terrain() = default;
  Terrain(const WorldSpec& w, double base_alt, std::uint64_t seed) : base_(base_alt) {
    if (!w.relief || w.ground_amplitude == 0.0) return;
    CounterRng rng(seed, CounterRng::stream_id("terrain"));
    for (int i = 0; i < 4; ++i) {
      const double wl = w.ground_wavelength * rng.uniform(0.7, 1.4);
      const double dir = rng.uniform(0.0, 2.0 * kPi);
      waves_.push_back({2.0 * kPi / wl * Vec2(std::cos(dir), std::sin(dir)), rng.uniform(0.0, 2.0 * kPi),
                        0.5 * w.ground_amplitude});
    }
  }

  double base() const { return base_; }

  double height(const Vec2& p) const {
    double z = base_;
    for (const auto& w : waves_) z += w.amp * std::sin(w.k.dot(p) + w.phase);
    return z;
  }
  Vec2 gradient(const Vec2& p) const {
    Vec2 g = Vec2::Zero();
    for (const auto& w : waves_) g += w.amp * std::cos(w.k.dot(p) + w.phase) * w.k;
    return g;
  }
  Mat2 hessian(const Vec2& p) const {
    Mat2 h = Mat2::Zero();
    for (const auto& w : waves_) h -= w.amp * std::sin(w.k.dot(p) + w.phase) * w.k * w.k.transpose();
    return h;
  }

 private:
  struct Wave {
    Vec2 k;
    double phase;
    double amp;
  };
  double base_ = 0.0;
  std::vector<Wave> waves_;
};

/// Ground truth at one instant.
struct TruthState {
  double t = 0.0;
  double s = 0.0;
  Vec2 xy = Vec2::Zero();  // map frame
  Vec3 r = Vec3::Zero();   // lon, lat, alt
  Vec3 v_n = Vec3::Zero();
  Vec3 a_n = Vec3::Zero();  // d v_n / dt
  geo::Euler euler;
  Mat3 c_b_n = Mat3::Identity();
  Vec3 omega_nb_b = Vec3::Zero();

  sins::NavState nav() const {
    sins::NavState n;
    n.t = t;
    n.r = r;
    n.v_n = v_n;
    n.q_b_n = Quat(c_b_n).normalized();
    return n;
  }
  map::Pose6 pose() const { return {xy.x(), xy.y(), r.z(), euler.roll, euler.pitch, euler.heading}; }
};

/// Vehicle driving along the path on the terrain with a sinusoidal speed
/// profile. Body heading follows the ENU velocity, pitch follows the
/// climb angle, roll is zero. All derivatives are analytic.
class Trajectory {
 public:
  Trajectory(const TrajectorySpec& spec, const Terrain& terrain)
      : spec_(spec),
        path_(spec),
        terrain_(terrain),
        proj_(spec.origin),
        model_(spec.flat_earth ? geo::EarthModel::flat_model(spec.origin.lat, spec.origin.alt)
                               : geo::EarthModel::wgs84_model()) {
    omega_ = 2.0 * kPi / spec.speed_period;
    if (spec.duration > 0.0) {
      duration_ = spec.duration;
      if (arc_length(duration_) > path_.length() + 1e-9) fail(ErrorKind::input, "trajectory: duration exceeds path");
    } else {
      if (spec.speed == 0.0) fail(ErrorKind::input, "trajectory: stationary runs need a duration");
      double lo = 0.0, hi = 1.0;
      while (arc_length(hi) < path_.length()) hi *= 2.0;
      for (int i = 0; i < 200 && hi - lo > 1e-12; ++i) {
        const double mid = 0.5 * (lo + hi);
        (arc_length(mid) < path_.length() ? lo : hi) = mid;
      }
      duration_ = lo;
    }
  }

  const Path& path() const { return path_; }
  const Terrain& terrain() const { return terrain_; }
  const geo::LocalProjection& projection() const { return proj_; }
  const geo::EarthModel& model() const { return model_; }
  double duration() const { return duration_; }
  bool stationary() const { return spec_.speed == 0.0 && spec_.speed_variation == 0.0; }

  double arc_length(double t) const {
    return spec_.speed * t + spec_.speed_variation / omega_ * (1.0 - std::cos(omega_ * t));
  }
  double speed(double t) const { return spec_.speed + spec_.speed_variation * std::sin(omega_ * t); }
  double accel(double t) const { return spec_.speed_variation * omega_ * std::cos(omega_ * t); }

  TruthState at(double t) const {
    TruthState st;
    st.t = t;
    st.s = arc_length(t);
    const double v = speed(t), a = accel(t);
    const double h = path_.heading(st.s), k = path_.curvature(st.s);
    const Vec2 tg(std::sin(h), std::cos(h)), nr(std::cos(h), -std::sin(h));
    st.xy = path_.position(st.s);
    const Vec2 pd = v * tg;
    const Vec2 pdd = a * tg + v * v * k * nr;
    const double z = terrain_.height(st.xy);
    const Vec2 gz = terrain_.gradient(st.xy);
    const double zd = gz.dot(pd);
    const double zdd = pd.dot(terrain_.hessian(st.xy) * pd) + gz.dot(pdd);

    const double sx = proj_.scale_x(), sy = proj_.scale_y();
    const Vec3 r = proj_.inverse(st.xy, z);
    st.r = r;
    const Vec3 rd(pd.x() / sx, pd.y() / sy, zd);
    const Vec3 rdd(pdd.x() / sx, pdd.y() / sy, zdd);

    // v_n = M(r) r_dot with M = diag((Rn + h) cos(lat), Rm + h, 1).
    double m1, m2, m1d = 0.0, m2d = 0.0;
    if (model_.is_flat()) {
      m1 = sx;
      m2 = sy;
    } else {
      const double lat = r.y(), alt = r.z();
      const double rn = geo::radius_transverse(lat), rm = geo::radius_meridian(lat);
      m1 = (rn + alt) * std::cos(lat);
      m2 = rm + alt;
      m1d = (geo::radius_transverse_dlat(lat) * rd.y() + rd.z()) * std::cos(lat) - (rn + alt) * std::sin(lat) * rd.y();
      m2d = geo::radius_meridian_dlat(lat) * rd.y() + rd.z();
    }
    st.v_n = Vec3(m1 * rd.x(), m2 * rd.y(), rd.z());
    st.a_n = Vec3(m1d * rd.x() + m1 * rdd.x(), m2d * rd.y() + m2 * rdd.y(), rdd.z());

    double psi = h, theta = 0.0, psid = 0.0, thetad = 0.0;
    if (!stationary()) {
      const Vec3& vv = st.v_n;
      const Vec3& aa = st.a_n;
      const double vh2 = vv.x() * vv.x() + vv.y() * vv.y(), vh = std::sqrt(vh2);
      psi = std::atan2(vv.x(), vv.y());
      psid = (aa.x() * vv.y() - vv.x() * aa.y()) / vh2;
      const double vhd = (vv.x() * aa.x() + vv.y() * aa.y()) / vh;
      theta = std::atan2(vv.z(), vh);
      thetad = (aa.z() * vh - vv.z() * vhd) / (vh2 + vv.z() * vv.z());
    }
    st.euler = {0.0, theta, psi};
    const Mat3 rz = geo::rot_z(-psi), rx = geo::rot_x(theta);
    st.c_b_n = rz * rx;
    const Mat3 cd = -psid * detail::drot_z(-psi) * rx + thetad * rz * detail::drot_x(theta);
    st.omega_nb_b = detail::vee(st.c_b_n.transpose() * cd);
    return st;
  }

  /// Error-free IMU outputs (body rate relative to inertial space and
  /// specific force) at one instant.
  void ideal_imu(const TruthState& st, Vec3& omega_ib_b, Vec3& f_b) const {
    const geo::EarthParams e = geo::earth_params(st.r, st.v_n, model_);
    const Mat3 ct = st.c_b_n.transpose();
    omega_ib_b = st.omega_nb_b + ct * e.omega_in_n();
    f_b = ct * (st.a_n + (2.0 * e.omega_ie_n + e.omega_en_n).cross(st.v_n) - e.g_n);
  }

 private:
  TrajectorySpec spec_;
  Path path_;
  Terrain terrain_;
  geo::LocalProjection proj_;
  geo::EarthModel model_;
  double omega_ = 1.0;
  double duration_ = 0.0;
};

}  // namespace fusionloc::sim
