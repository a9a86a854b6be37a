#pragma once

#include "fusionloc/sins/imu_spec.hpp"
#include "fusionloc/sins/mechanize.hpp"

#include <Eigen/Cholesky>
#include <boost/math/distributions/chi_squared.hpp>

#include <cstdint>
#include <variant>

namespace fusionloc::eskf {

using sins::NavState;
using sins::Vec15;
using Mat15 = Eigen::Matrix<double, 15, 15>;
using Mat15x12 = Eigen::Matrix<double, 15, 12>;
using Mat12 = Eigen::Matrix<double, 12, 12>;

// Error-state layout.
inline constexpr int kPos = 0, kVel = 3, kAtt = 6, kBa = 9, kBg = 12;

struct FilterConfig {
  geo::EarthModel model = geo::EarthModel::wgs84_model();
  sins::ImuSpec imu = sins::tactical_imu();
  bool gating = true;
  double gate_probability = 0.997;
  double lidar_alt_var = 0.04;
  double lidar_heading_var = square(0.5 * kDeg);
};

struct ErrorStateFilter {
  NavState nav;
  Mat15 P = Mat15::Identity();
};

/// Continuous-time error dynamics dX/dt = F dX + G W around the nominal
/// state, with W = (accel noise, gyro noise, accel bias walk, gyro bias walk).
///
/// The position rows use the metric psi-model transport term expressed in
/// (lon, lat, alt) units, -R_c (w_en x) R_c^-1, so that the rad and m
/// components of dr do not mix.
struct FG {
  Mat15 F = Mat15::Zero();
  Mat15x12 G = Mat15x12::Zero();
};

inline FG build_F_G(const NavState& nav, const sins::ImuSample& sample, const geo::EarthModel& model) {
  const geo::EarthParams e = geo::earth_params(nav.r, nav.v_n, model);
  const Mat3 c = nav.c_b_n();
  const Vec3 f_n = c * (sample.f_b - nav.b_a);
  const Mat3 rc_inv = e.rc.diagonal().cwiseInverse().asDiagonal();
  FG out;
  out.F.block<3, 3>(kPos, kPos) = -e.rc * skew(e.omega_en_n) * rc_inv;
  out.F.block<3, 3>(kPos, kVel) = e.rc;
  out.F.block<3, 3>(kVel, kVel) = -skew(2.0 * e.omega_ie_n + e.omega_en_n);
  out.F.block<3, 3>(kVel, kAtt) = skew(f_n);
  out.F.block<3, 3>(kVel, kBa) = c;
  out.F.block<3, 3>(kAtt, kAtt) = -skew(e.omega_in_n());
  out.F.block<3, 3>(kAtt, kBg) = -c;
  out.G.block<3, 3>(kVel, 0) = c;
  out.G.block<3, 3>(kAtt, 3) = -c;
  out.G.block<6, 6>(kBa, 6) = Eigen::Matrix<double, 6, 6>::Identity();
  return out;
}

inline Mat12 process_noise(const sins::ImuSpec& imu) {
  Eigen::Matrix<double, 12, 1> d;
  d << Vec3::Constant(square(imu.accel_vrw)), Vec3::Constant(square(imu.gyro_arw)),
      Vec3::Constant(square(imu.accel_bias_walk)), Vec3::Constant(square(imu.gyro_bias_walk));
  return d.asDiagonal();
}

inline Mat15 symmetrize(const Mat15& p) { return 0.5 * (p + p.transpose()); }

inline bool is_spd(const Mat15& p) {
  // Scale to unit diagonal first; position entries are ~1e-14 rad^2.
  const Eigen::Matrix<double, 15, 1> d = p.diagonal();
  if ((d.array() <= 0.0).any() || !d.allFinite()) return false;
  const Eigen::Matrix<double, 15, 1> s = d.cwiseSqrt().cwiseInverse();
  const Mat15 n = s.asDiagonal() * p * s.asDiagonal();
  Eigen::LLT<Mat15> llt(n);
  return llt.info() == Eigen::Success;
}

/// First-order discrete covariance propagation.
inline Mat15 propagate_covariance(const Mat15& P, const FG& fg, const Mat12& Q, double dt) {
  if (!(dt > 0.0) || dt > 0.1) fail(ErrorKind::input, "dt must be in (0, 0.1]");
  const Mat15 phi = Mat15::Identity() + fg.F * dt;
  Mat15 out = symmetrize(phi * P * phi.transpose() + fg.G * Q * fg.G.transpose() * dt);
  if (!is_spd(out)) fail(ErrorKind::numerical, "covariance ill-conditioned");
  return out;
}

/// Mechanizes the nominal state and propagates P across one IMU sample.
inline void time_update(ErrorStateFilter& f, const sins::ImuSample& sample, double dt, const FilterConfig& cfg) {
  const FG fg = build_F_G(f.nav, sample, cfg.model);
  const NavState next = sins::mechanize(f.nav, sample, dt, cfg.model);
  f.P = propagate_covariance(f.P, fg, process_noise(cfg.imu), dt);
  f.nav = next;
}

struct InitialSigma {
  double position_m = 1.0;
  double velocity = 0.5;
  double attitude = 1.0 * kDeg;
  double heading = 5.0 * kDeg;
};

inline Mat15 initial_covariance(const NavState& nav, const sins::ImuSpec& imu, const InitialSigma& s = {}) {
  const Vec3 m = sins::meters_per_unit(nav.r);
  Eigen::Matrix<double, 15, 1> d;
  d << square(s.position_m / m.x()), square(s.position_m / m.y()), square(s.position_m), Vec3::Constant(square(s.velocity)),
      square(s.attitude), square(s.attitude), square(s.heading), Vec3::Constant(square(std::max(imu.accel_bias_sigma, 1e-6))),
      Vec3::Constant(square(std::max(imu.gyro_bias_sigma, 1e-9)));
  return d.asDiagonal();
}

// ---------------------------------------------------------------------------
// Measurements

/// LiDAR pose fix: geodetic position, heading and metric covariances.
struct LidarPose {
  Vec3 r = Vec3::Zero();
  double heading = 0.0;
  bool has_heading = true;
  Mat2 cov_en = Mat2::Identity();  // m^2, east/north
  double alt_var = 0.04;
  double heading_var = square(0.5 * kDeg);
};

/// GNSS position fix with an ENU covariance in m^2.
struct GnssPosition {
  Vec3 r = Vec3::Zero();
  Mat3 cov_enu = Mat3::Identity();
  bool fixed = false;
};

enum class MeasurementKind : int { lidar = 0, gnss = 1 };

struct TimedMeasurement {
  double t_occurred = 0.0;
  double t_received = 0.0;
  std::uint64_t seq = 0;
  bool degraded = false;
  std::variant<LidarPose, GnssPosition> data;

  MeasurementKind kind() const { return data.index() == 0 ? MeasurementKind::lidar : MeasurementKind::gnss; }
};

/// Canonical processing order for measurements sharing a filter slot.
inline bool canonical_less(const TimedMeasurement& a, const TimedMeasurement& b) {
  if (a.t_occurred != b.t_occurred) return a.t_occurred < b.t_occurred;
  if (a.kind() != b.kind()) return a.kind() < b.kind();
  return a.seq < b.seq;
}

struct UpdateResult {
  bool accepted = false;
  double nis = 0.0;
  int dof = 0;
  Vec15 dx = Vec15::Zero();
};

inline double chi_square_quantile(int dof, double p) {
  boost::math::chi_squared dist(static_cast<double>(dof));
  return boost::math::quantile(dist, p);
}

/// Standard KF update with gating, Joseph-form covariance and feedback reset.
template <int M>
UpdateResult kalman_update(ErrorStateFilter& f, const Eigen::Matrix<double, M, 1>& z,
                           const Eigen::Matrix<double, M, 15>& H, const Eigen::Matrix<double, M, M>& R,
                           const FilterConfig& cfg) {
  using MatM = Eigen::Matrix<double, M, M>;
  UpdateResult res;
  res.dof = M;
  const MatM S = H * f.P * H.transpose() + R;
  const Eigen::LDLT<MatM> ldlt(S);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all())
    fail(ErrorKind::numerical, "innovation covariance not positive definite");
  res.nis = z.dot(ldlt.solve(z));
  if (cfg.gating && res.nis > chi_square_quantile(M, cfg.gate_probability)) return res;
  const Eigen::Matrix<double, 15, M> K = ldlt.solve(H * f.P).transpose();
  res.dx = K * z;
  const Mat15 ikh = Mat15::Identity() - K * H;
  Mat15 p = symmetrize(ikh * f.P * ikh.transpose() + K * R * K.transpose());
  if (!is_spd(p)) fail(ErrorKind::numerical, "covariance ill-conditioned");
  f.nav = sins::apply_correction(f.nav, res.dx);
  f.P = p;
  res.accepted = true;
  return res;
}

/// Nominal position advanced by `lead` seconds at the current velocity; used
/// when a measurement occurred between IMU samples.
inline Vec3 predicted_position(const NavState& nav, double lead, const geo::EarthModel& model) {
  if (lead == 0.0) return nav.r;
  const geo::EarthParams e = geo::earth_params(nav.r, nav.v_n, model);
  return nav.r + e.rc * nav.v_n * lead;
}

/// Heading row of the LiDAR measurement matrix for the current attitude.
inline Eigen::Matrix<double, 1, 15> heading_row(const Mat3& c) {
  const double c12 = c(0, 1), c22 = c(1, 1), c32 = c(2, 1);
  const double den = c22 * c22 + c12 * c12;
  Eigen::Matrix<double, 1, 15> h = Eigen::Matrix<double, 1, 15>::Zero();
  h(kAtt) = -c12 * c32 / den;
  h(kAtt + 1) = -c22 * c32 / den;
  h(kAtt + 2) = 1.0;
  return h;
}

inline UpdateResult update_lidar(ErrorStateFilter& f, const LidarPose& m, const FilterConfig& cfg, double lead = 0.0) {
  const Vec3 mpu = sins::meters_per_unit(f.nav.r);
  const Vec3 r_s = predicted_position(f.nav, lead, cfg.model);
  Vec3 dr = r_s - m.r;
  dr.x() = wrap_angle(dr.x());
  const Mat2 to_rad = Vec2(1.0 / mpu.x(), 1.0 / mpu.y()).asDiagonal();
  if (!m.has_heading) {
    Eigen::Matrix<double, 3, 15> H = Eigen::Matrix<double, 3, 15>::Zero();
    H.block<3, 3>(0, kPos).setIdentity();
    Mat3 R = Mat3::Zero();
    R.block<2, 2>(0, 0) = to_rad * m.cov_en * to_rad;
    R(2, 2) = m.alt_var;
    return kalman_update<3>(f, dr, H, R, cfg);
  }
  Eigen::Matrix<double, 4, 15> H = Eigen::Matrix<double, 4, 15>::Zero();
  H.block<3, 3>(0, kPos).setIdentity();
  H.row(3) = heading_row(f.nav.c_b_n());
  Eigen::Matrix<double, 4, 4> R = Eigen::Matrix<double, 4, 4>::Zero();
  R.block<2, 2>(0, 0) = to_rad * m.cov_en * to_rad;
  R(2, 2) = m.alt_var;
  R(3, 3) = m.heading_var;
  Vec4 z;
  z << dr, wrap_angle(f.nav.heading() - m.heading);
  return kalman_update<4>(f, z, H, R, cfg);
}

inline UpdateResult update_gnss(ErrorStateFilter& f, const GnssPosition& m, const FilterConfig& cfg, double lead = 0.0) {
  const Vec3 mpu = sins::meters_per_unit(f.nav.r);
  Vec3 dr = predicted_position(f.nav, lead, cfg.model) - m.r;
  dr.x() = wrap_angle(dr.x());
  const Mat3 to_rad = mpu.cwiseInverse().asDiagonal();
  Eigen::Matrix<double, 3, 15> H = Eigen::Matrix<double, 3, 15>::Zero();
  H.block<3, 3>(0, kPos).setIdentity();
  const Mat3 R = to_rad * m.cov_enu * to_rad;
  return kalman_update<3>(f, dr, H, R, cfg);
}

inline UpdateResult apply_measurement(ErrorStateFilter& f, const TimedMeasurement& m, const FilterConfig& cfg,
                                      double lead = 0.0) {
  if (const auto* l = std::get_if<LidarPose>(&m.data)) return update_lidar(f, *l, cfg, lead);
  return update_gnss(f, std::get<GnssPosition>(m.data), cfg, lead);
}

}  // namespace fusionloc::eskf
