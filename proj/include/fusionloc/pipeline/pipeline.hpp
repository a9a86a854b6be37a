#pragma once

#include "fusionloc/eskf/delayed_fusion.hpp"
#include "fusionloc/gnss/rtk.hpp"
#include "fusionloc/lidar_loc/localizer.hpp"
#include "fusionloc/sim/dataset.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace fusionloc::pipeline {

using nlohmann::json;

enum class Mode { two_sys, three_sys, lidar_only, gnss_only, intensity_only, heading_off, fixed_gamma };

inline const std::vector<std::pair<Mode, std::string>>& mode_names() {
  static const std::vector<std::pair<Mode, std::string>> names{
      {Mode::two_sys, "2sys"},           {Mode::three_sys, "3sys"},         {Mode::lidar_only, "lidar-only"},
      {Mode::gnss_only, "gnss-only"},    {Mode::intensity_only, "intensity-only"},
      {Mode::heading_off, "heading-off"}, {Mode::fixed_gamma, "fixed-gamma"}};
  return names;
}

inline std::string mode_name(Mode m) {
  for (const auto& [k, v] : mode_names())
    if (k == m) return v;
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  for (const auto& [k, v] : mode_names())
    if (v == s) return k;
  fail(ErrorKind::input, "unknown mode '" + s + "'");
}

struct PipelineConfig {
  lidar::LocalizerConfig localizer = default_localizer();
  eskf::FilterConfig filter;
  eskf::InitialSigma init_sigma{0.5, 0.2, 0.3 * kDeg, 1.0 * kDeg};
  gnss::RtkConfig rtk;
  double horizon = 2.0;          // s of buffered history for late measurements
  double output_rate_hz = 20.0;  // trajectory rows per second (fused modes)
  double fixed_gamma = 0.5;
  bool use_float_gnss = false;  // feed float RTK solutions to the filter
  bool use_imu_spec_from_dataset = true;

  static lidar::LocalizerConfig default_localizer() {
    lidar::LocalizerConfig c;
    c.raster.band_above = 1.0;
    c.raster.intensity_var_floor = 16.0;
    c.likelihood.lambda = 1.0e4;
    return c;
  }
};

PipelineConfig pipeline_config_from_json(const json& j);
PipelineConfig load_pipeline_config(const std::string& path);

struct LidarFixRecord {
  double t = 0.0;
  double t_received = 0.0;
  Vec2 prior = Vec2::Zero();
  double prior_heading = 0.0;
  lidar::LidarFix fix;
  bool used = false;
};

struct GnssFixRecord {
  double t = 0.0;
  double t_received = 0.0;
  bool fixed = false;
  bool aided = false;
  bool used = false;
  Vec2 xy = Vec2::Zero();
  Mat3 cov_enu = Mat3::Identity();
  double ratio = 0.0;
};

struct PipelineResult {
  Mode mode = Mode::two_sys;
  std::vector<eval::NavRecord> trajectory;
  std::vector<eskf::MeasurementLogEntry> log;
  std::vector<LidarFixRecord> lidar;
  std::vector<GnssFixRecord> gnss;
  std::size_t slips_detected = 0;
  double seconds = 0.0;
};

/// Runs the estimator in real-time order: every sensor sample is handled at
/// its receive time, with the filter's history buffer absorbing the latency.
class Pipeline {
 public:
  Pipeline(const map::LidarMap* m, const PipelineConfig& cfg) : map_(m), cfg_(cfg) {}

  PipelineResult run(const sim::Dataset& d, Mode mode) const;

 private:
  void require_tile(const Vec2& xy) const;
  void fused(const sim::Dataset& d, Mode mode, PipelineResult& out) const;
  // Raw LiDAR fixes chained with a constant-velocity motion model. Roll and
  // pitch come from the map surface around the predicted position.
  void lidar_only(const sim::Dataset& d, PipelineResult& out) const;
  // Unaided single-epoch RTK, each epoch seeded with the previous solution.
  void gnss_only(const sim::Dataset& d, PipelineResult& out) const;

  const map::LidarMap* map_;
  PipelineConfig cfg_;
};

void save_measurement_log(const std::string& path, const std::vector<eskf::MeasurementLogEntry>& log);
void save_lidar_fixes(const std::string& path, const std::vector<LidarFixRecord>& fixes);
void save_gnss_fixes(const std::string& path, const std::vector<GnssFixRecord>& fixes);

}  // namespace fusionloc::pipeline
