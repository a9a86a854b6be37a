#pragma once

#include "fusionloc/sins/nav_state.hpp"

#include <Eigen/Core>

namespace fusionloc::sins {

using Vec15 = Eigen::Matrix<double, 15, 1>;

/// One integration step of the strapdown equations over [state.t, state.t + dt].
///
/// Attitude uses the exact exponential of the bias-corrected body rate plus a
/// navigation-frame rotation for the Earth and transport rates. Velocity and
/// position use a midpoint (second-order) scheme: forces are evaluated at the
/// half-step attitude, position and velocity.
inline NavState mechanize(const NavState& s, const ImuSample& sample, double dt,
                          const geo::EarthModel& model = geo::EarthModel::wgs84_model()) {
  if (!sample.finite()) fail(ErrorKind::numerical, "non-finite IMU sample");
  if (!(dt > 0.0) || dt > 0.1) fail(ErrorKind::input, "dt must be in (0, 0.1]");

  const Vec3 w = sample.omega_ib_b - s.b_g;
  const Vec3 f = sample.f_b - s.b_a;

  // Half-step predictor for the Earth-dependent terms.
  const geo::EarthParams e0 = geo::earth_params(s.r, s.v_n, model);
  const Mat3 c0 = s.c_b_n();
  const Vec3 a0 = c0 * f - (2.0 * e0.omega_ie_n + e0.omega_en_n).cross(s.v_n) + e0.g_n;
  const Vec3 v_half = s.v_n + 0.5 * dt * a0;
  const Vec3 r_half = s.r + 0.5 * dt * e0.rc * s.v_n;
  const geo::EarthParams eh = geo::earth_params(r_half, v_half, model);

  const Vec3 w_in = eh.omega_in_n();
  const Quat q_half = (geo::quat_exp(-0.5 * dt * w_in) * s.q_b_n * geo::quat_exp(0.5 * dt * w)).normalized();
  const Quat q_end = (geo::quat_exp(-dt * w_in) * s.q_b_n * geo::quat_exp(dt * w)).normalized();

  const Vec3 a_half = q_half.toRotationMatrix() * f - (2.0 * eh.omega_ie_n + eh.omega_en_n).cross(v_half) + eh.g_n;
  NavState out = s;
  out.t = s.t + dt;
  out.v_n = s.v_n + dt * a_half;
  out.r = s.r + dt * eh.rc * (0.5 * (s.v_n + out.v_n));
  out.r.x() = wrap_angle(out.r.x());
  out.q_b_n = q_end;
  if (!out.finite()) fail(ErrorKind::numerical, "mechanization produced non-finite state");
  return out;
}

/// Feeds an estimated error state back into the navigation state. The error
/// convention is computed minus true for position and velocity, attitude
/// error psi with C_computed = (I - [psi x]) C_true, and true minus estimated
/// for biases.
inline NavState apply_correction(const NavState& s, const Vec15& dx) {
  const Vec3 psi = dx.segment<3>(6);
  if (!dx.allFinite()) fail(ErrorKind::numerical, "non-finite correction");
  if (psi.norm() >= 0.1) fail(ErrorKind::numerical, "correction too large");
  NavState out = s;
  out.r -= dx.segment<3>(0);
  out.r.x() = wrap_angle(out.r.x());
  out.v_n -= dx.segment<3>(3);
  out.q_b_n = (geo::quat_exp(psi) * s.q_b_n).normalized();
  out.b_a += dx.segment<3>(9);
  out.b_g += dx.segment<3>(12);
  return out;
}

}  // namespace fusionloc::sins
