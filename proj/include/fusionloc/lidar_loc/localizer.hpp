#pragma once

#include "fusionloc/core/bytes.hpp"
#include "fusionloc/lidar_loc/heading.hpp"
#include "fusionloc/lidar_loc/likelihood.hpp"

#include <limits>
#include <optional>
#include <span>
#include <string>

namespace fusionloc::lidar {

struct LocalizerConfig {
  map::RasterParams raster;
  int window_half = 20;
  LikelihoodConfig likelihood;
  PosteriorConfig posterior;
  EstimateConfig estimate;
  HeadingConfig heading;
  bool estimate_heading = true;
  double heading_radius = 12.0;  // map image half-size around the prior (m)
  double motion_sigma = 0.05;    // drift between scans (m)
  double heading_gate = 5.0;         // accepted rotation, in prior heading sigmas
  double heading_gate_floor = 0.01;  // rad
};

struct LidarFix {
  double x = 0.0;
  double y = 0.0;
  double alt = 0.0;
  double heading = 0.0;
  Mat2 cov_xy = Mat2::Identity();
  bool heading_estimated = false;  // false when the prior heading was kept
  bool degraded = false;
  double gamma = 0.5;
  double kappa = 1.0;
  std::size_t n_z = 0;
};

struct LocalizeOutput {
  LidarFix fix;
  HistogramPosterior posterior;
  LikelihoodResult likelihood;
};

/// Heading by image alignment, altitude from the map, transform the scan,
/// likelihood sweep, posterior, offset and covariance, altitude at the
/// estimate. `predicted` (already moved by the SINS displacement) is
/// recentered on the prior; without it the prior belief is uniform. An
/// aligned heading further than the gate from the prior is discarded.
inline LocalizeOutput localize(const map::LidarMap& m, std::span<const map::ScanPoint> points, const map::Pose6& prior,
                               const LocalizerConfig& cfg, const HistogramPosterior* predicted = nullptr,
                               double prior_heading_sigma = std::numeric_limits<double>::infinity()) {
  if (!prior.finite()) fail(ErrorKind::input, "pose is not finite");
  LocalizeOutput out;
  LidarFix& fix = out.fix;
  const Vec2 c0 = prior.xy();
  const double a0 = m.altitude_at(c0.x(), c0.y());

  double h = prior.heading;
  if (cfg.estimate_heading) {
    map::Pose6 p0 = prior;
    p0.alt = a0;
    const map::OnlineGrid g0 = map::rasterize_online(points, p0, cfg.raster);
    try {
      const Raster img = map_intensity_raster(m, c0, cfg.heading_radius);
      const HeadingResult hr = estimate_heading(online_template(g0), img, c0, prior.heading, cfg.heading);
      const double gate = std::max(cfg.heading_gate * prior_heading_sigma, cfg.heading_gate_floor);
      if (!hr.degraded && std::abs(wrap_angle(hr.heading - prior.heading)) <= gate) {
        h = hr.heading;
        fix.heading_estimated = true;
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::input) throw;
    }
  }

  map::Pose6 p1 = prior;
  p1.alt = a0;
  p1.heading = h;
  const map::OnlineGrid g1 = map::rasterize_online(points, p1, cfg.raster);
  out.likelihood = measurement_likelihood(g1, m, cfg.window_half, cfg.likelihood);

  const double res = m.grid().resolution();
  const HistogramPosterior pred = predicted ? recenter(*predicted, c0)
                                            : HistogramPosterior::uniform(c0, res, cfg.window_half);
  if (pred.belief.half != cfg.window_half) fail(ErrorKind::input, "window size mismatch");
  out.posterior = posterior_update(pred, out.likelihood.combined, cfg.posterior, &fix.kappa);
  const HistogramEstimate est = extract_estimate(out.posterior, cfg.estimate);

  fix.x = est.position.x();
  fix.y = est.position.y();
  fix.cov_xy = est.covariance;
  fix.heading = h;
  fix.alt = m.altitude_at(fix.x, fix.y);
  fix.degraded = est.degraded || pred.degraded;
  fix.gamma = out.likelihood.gamma;
  fix.n_z = out.likelihood.n_z;
  return out;
}

/// Keeps the histogram posterior between scans.
class LidarLocalizer {
 public:
  LidarLocalizer(const map::LidarMap& m, LocalizerConfig cfg) : map_(&m), cfg_(std::move(cfg)) {}

  const LocalizerConfig& config() const { return cfg_; }
  const std::optional<HistogramPosterior>& posterior() const { return last_; }
  void reset() { last_.reset(); }

  /// `displacement` is the inertial motion since the previous scan's
  /// posterior was formed (meters in the map frame).
  LidarFix localize(std::span<const map::ScanPoint> points, const map::Pose6& prior,
                    const std::optional<Vec2>& displacement,
                    double prior_heading_sigma = std::numeric_limits<double>::infinity()) {
    std::optional<HistogramPosterior> pred;
    if (last_ && displacement) pred = predict(*last_, *displacement, cfg_.motion_sigma);
    LocalizeOutput o = lidar::localize(*map_, points, prior, cfg_, pred ? &*pred : nullptr, prior_heading_sigma);
    last_ = std::move(o.posterior);
    return o.fix;
  }

 private:
  const map::LidarMap* map_;
  LocalizerConfig cfg_;
  std::optional<HistogramPosterior> last_;
};

/// Portable float map of a window (rows written bottom to top, i.e. v = -W first).
inline std::vector<std::uint8_t> encode_pfm(const Window& w) {
  const std::string header = "Pf\n" + std::to_string(w.side()) + " " + std::to_string(w.side()) + "\n-1.0\n";
  ByteWriter out;
  out.put_bytes(reinterpret_cast<const std::uint8_t*>(header.data()), header.size());
  for (int v = -w.half; v <= w.half; ++v)
    for (int u = -w.half; u <= w.half; ++u) out.put<float>(static_cast<float>(w.at(u, v)));
  return out.bytes();
}

inline void write_pfm(const std::string& path, const Window& w) { write_file_bytes(path, encode_pfm(w)); }

}  // namespace fusionloc::lidar
