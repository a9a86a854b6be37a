#pragma once

#include "fusionloc/gnss/rtk.hpp"
#include "fusionloc/map/point_cloud.hpp"
#include "fusionloc/sim/world.hpp"

#include <map>
#include <vector>

namespace fusionloc::sim {

/// Samples world cells within range of the truth pose. Each kept cell yields
/// `points_per_cell` returns placed inside the cell, with intensity and
/// altitude noise drawn from the cell's own variances. Inside the changed
/// world (`post_change`), cells present in `maps.changes` override the map.
inline map::Scan synthesize_scan(const TruthState& truth, const WorldMaps& maps, bool post_change,
                                 const LidarSpec& spec, std::uint64_t seed, std::uint64_t scan_index,
                                 bool noiseless = false) {
  const auto& grid = maps.before.grid();
  const double res = grid.resolution();
  CounterRng rng(seed, CounterRng::stream_id("scan"));
  rng.seek(scan_index << 32);
  const map::Pose6 pose = truth.pose();
  const map::PoseTransform tf(pose);
  const map::CellIndex lo = grid.cell_of(truth.xy - Vec2::Constant(spec.range));
  const map::CellIndex hi = grid.cell_of(truth.xy + Vec2::Constant(spec.range));
  map::Scan scan;
  scan.t = truth.t;
  for (std::int64_t j = lo.j; j <= hi.j; ++j)
    for (std::int64_t i = lo.i; i <= hi.i; ++i) {
      const map::CellIndex c{i, j};
      const Vec2 center = grid.center_of(c);
      if ((center - truth.xy).squaredNorm() > spec.range * spec.range) continue;
      if (rng.uniform() >= spec.sparsity) continue;
      const map::GridCellStats* cell = post_change ? maps.changes.find(c) : nullptr;
      if (cell == nullptr || cell->empty()) cell = maps.before.find(c);
      if (cell == nullptr || cell->empty()) continue;
      const double si = noiseless ? 0.0 : std::sqrt(static_cast<double>(cell->intensity_var));
      const double sa = noiseless ? 0.0 : std::sqrt(static_cast<double>(cell->altitude_var));
      for (int k = 0; k < spec.points_per_cell; ++k) {
        const double x = center.x() + res * 0.8 * (rng.uniform() - 0.5);
        const double y = center.y() + res * 0.8 * (rng.uniform() - 0.5);
        const double z = cell->altitude_mean + sa * rng.gaussian();
        const double v = std::clamp(cell->intensity_mean + si * rng.gaussian(), 0.0, 255.0);
        const Vec3 b = tf.inverse(Vec3(x, y, z));
        scan.points.push_back({static_cast<float>(b.x()), static_cast<float>(b.y()), static_cast<float>(b.z()),
                               static_cast<float>(v)});
      }
    }
  return scan;
}

/// Synthetic sky: satellites at fixed elevations drifting slowly in azimuth,
/// 20200 km from the base station.
class Constellation {
 public:
  Constellation() = default;
  Constellation(const GnssSpec& spec, const geo::Geodetic& origin, std::uint64_t seed) {
    const geo::LocalProjection proj(origin);
    base_geo_ = geo::Geodetic::from(proj.inverse(spec.base_offset, origin.alt + spec.base_height));
    base_ = geo::geodetic_to_ecef(base_geo_);
    enu_to_ecef_ = geo::ecef_to_enu_rotation(base_geo_.lon, base_geo_.lat).transpose();
    CounterRng rng(seed, CounterRng::stream_id("constellation"));
    const int n = spec.satellites;
    for (int k = 0; k < n; ++k) {
      Track t;
      t.id = k + 1;
      t.az0 = 2.0 * kPi * (k + 0.5 * rng.uniform()) / n;
      const double lo = spec.min_elevation + 5.0 * kDeg;
      t.el = k == 0 ? rng.uniform(70.0, 85.0) * kDeg : lo + (80.0 * kDeg - lo) * rng.uniform();
      t.az_rate = (rng.uniform() < 0.5 ? -1.0 : 1.0) * 2.0 * kPi / 43082.0;
      t.ambiguity = static_cast<long>(std::floor(rng.uniform(-300.0, 300.0)));
      tracks_.push_back(t);
    }
  }

  const Vec3& base_ecef() const { return base_; }
  const geo::Geodetic& base() const { return base_geo_; }
  std::size_t size() const { return tracks_.size(); }
  int id(std::size_t k) const { return tracks_[k].id; }
  long initial_ambiguity(std::size_t k) const { return tracks_[k].ambiguity; }

  Vec3 satellite(std::size_t k, double t) const {
    const Track& tr = tracks_[k];
    const double az = tr.az0 + tr.az_rate * t;
    const Vec3 u(std::sin(az) * std::cos(tr.el), std::cos(az) * std::cos(tr.el), std::sin(tr.el));
    return base_ + kOrbitRange * (enu_to_ecef_ * u);
  }

  static double elevation(const Vec3& sat, const Vec3& rover) {
    const geo::Geodetic g = geo::ecef_to_geodetic(rover);
    const Vec3 enu = geo::ecef_to_enu_rotation(g.lon, g.lat) * (sat - rover);
    return std::atan2(enu.z(), enu.head<2>().norm());
  }

 private:
  static constexpr double kOrbitRange = 2.02e7;
  struct Track {
    int id;
    double az0, el, az_rate;
    long ambiguity;
  };
  geo::Geodetic base_geo_{};
  Vec3 base_ = Vec3::Zero();
  Mat3 enu_to_ecef_ = Mat3::Identity();
  std::vector<Track> tracks_;
};

/// Per-satellite integer ambiguity at time t including injected slips.
inline std::map<int, long> ambiguities_at(const Constellation& c, const GnssSpec& spec, double t) {
  std::map<int, long> n;
  for (std::size_t k = 0; k < c.size(); ++k) n[c.id(k)] = c.initial_ambiguity(k);
  for (const SlipSpec& s : spec.slips)
    if (t >= s.t && n.count(s.satellite)) n[s.satellite] += s.cycles;
  return n;
}

/// One epoch of single-differenced observations for a rover at `rover_ecef`.
/// Noise is elevation dependent (sigma / sin(el)); `range_factor` inflates
/// the code noise (multipath). Draws use counters from `counter`.
inline gnss::GnssEpoch synthesize_epoch(const Constellation& c, const Vec3& rover_ecef, double t,
                                        const std::map<int, long>& amb, const GnssSpec& spec, double range_factor,
                                        const CounterRng& rng, std::uint64_t counter, bool noiseless = false) {
  gnss::GnssEpoch e;
  e.t = t;
  e.base_ecef = c.base_ecef();
  const double cdt = noiseless ? 0.0 : spec.clock_sigma * rng.gaussian_at(counter);
  for (std::size_t k = 0; k < c.size(); ++k) {
    const Vec3 sat = c.satellite(k, t);
    const double el = Constellation::elevation(sat, rover_ecef);
    if (el < spec.min_elevation) continue;
    gnss::SatObs s;
    s.id = c.id(k);
    s.sat_ecef = sat;
    s.elevation = el;
    s.wavelength = gnss::kL1Wavelength;
    const double R = gnss::sd_geometric_range(sat, rover_ecef, c.base_ecef());
    const double q = noiseless ? 0.0 : 1.0 / std::sin(el);
    s.sd_range = R + cdt + range_factor * spec.sigma_range * q * rng.gaussian_at(counter + 1 + 2 * k);
    s.sd_phase = R + cdt - s.wavelength * static_cast<double>(amb.at(s.id)) +
                 spec.sigma_phase * q * rng.gaussian_at(counter + 2 + 2 * k);
    e.sats.push_back(s);
  }
  return e;
}

}  // namespace fusionloc::sim
