#pragma once

#include "fusionloc/sim/trajectory.hpp"
#include "fusionloc/sins/imu_spec.hpp"

#include <vector>

namespace fusionloc::sim {

struct ImuStream {
  std::vector<sins::ImuSample> samples;
  // True sensor biases at every sample (same indexing as samples).
  std::vector<Vec3> bias_a;
  std::vector<Vec3> bias_g;
};

/// Inverts the strapdown equations along the truth: each sample is the
/// 4-point Gauss-Legendre average of the ideal rate and specific force over
/// the interval ending at its timestamp, plus a turn-on bias, a bias random
/// walk and white noise.
inline ImuStream synthesize_imu(const Trajectory& traj, const sins::ImuSpec& spec, std::uint64_t seed) {
  static constexpr double kX[4] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526};
  static constexpr double kW[4] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538};
  const double dt = 1.0 / spec.rate_hz;
  const auto n = static_cast<std::size_t>(std::floor(traj.duration() * spec.rate_hz + 1e-9));
  CounterRng bias_rng(seed, CounterRng::stream_id("imu_bias"));
  CounterRng noise_rng(seed, CounterRng::stream_id("imu_noise"));
  Vec3 ba, bg;
  for (int i = 0; i < 3; ++i) ba(i) = bias_rng.gaussian(spec.accel_bias_sigma);
  for (int i = 0; i < 3; ++i) bg(i) = bias_rng.gaussian(spec.gyro_bias_sigma);
  const double sd_f = spec.accel_vrw / std::sqrt(dt), sd_w = spec.gyro_arw / std::sqrt(dt);
  const double sd_wa = spec.accel_bias_walk * std::sqrt(dt), sd_wg = spec.gyro_bias_walk * std::sqrt(dt);

  ImuStream out;
  out.samples.reserve(n);
  out.bias_a.reserve(n);
  out.bias_g.reserve(n);
  for (std::size_t k = 1; k <= n; ++k) {
    const double t1 = static_cast<double>(k) * dt, tm = t1 - 0.5 * dt;
    Vec3 w = Vec3::Zero(), f = Vec3::Zero();
    for (int q = 0; q < 4; ++q) {
      Vec3 wq, fq;
      traj.ideal_imu(traj.at(tm + 0.5 * dt * kX[q]), wq, fq);
      w += 0.5 * kW[q] * wq;
      f += 0.5 * kW[q] * fq;
    }
    const std::uint64_t c = 12 * k;
    for (int i = 0; i < 3; ++i) {
      ba(i) += sd_wa * noise_rng.gaussian_at(c + 6 + i);
      bg(i) += sd_wg * noise_rng.gaussian_at(c + 9 + i);
    }
    sins::ImuSample s;
    s.t = t1;
    for (int i = 0; i < 3; ++i) {
      s.f_b(i) = f(i) + ba(i) + sd_f * noise_rng.gaussian_at(c + i);
      s.omega_ib_b(i) = w(i) + bg(i) + sd_w * noise_rng.gaussian_at(c + 3 + i);
    }
    out.samples.push_back(s);
    out.bias_a.push_back(ba);
    out.bias_g.push_back(bg);
  }
  return out;
}

}  // namespace fusionloc::sim
