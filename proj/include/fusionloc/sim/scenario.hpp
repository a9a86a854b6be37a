#pragma once

#include "fusionloc/core/types.hpp"
#include "fusionloc/geo/earth.hpp"
#include "fusionloc/sins/imu_spec.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <set>
#include <string>
#include <vector>

namespace fusionloc::sim {

using nlohmann::json;

/// Path piece whose curvature ramps linearly from the previous piece's end
/// value to `curvature` over `length` meters (positive curvature turns right).
struct SegmentSpec {
  double length = 100.0;
  double curvature = 0.0;
};

struct TimeWindow {
  double t0 = 0.0;
  double t1 = 0.0;
  bool contains(double t) const { return t >= t0 && t <= t1; }
};

struct TrajectorySpec {
  geo::Geodetic origin{116.3 * kDeg, 39.9 * kDeg, 50.0};  // map frame origin
  Vec2 start = Vec2::Zero();
  double start_heading = 0.0;  // rad
  std::vector<SegmentSpec> segments{{200.0, 0.0}};
  double speed = 10.0;
  double speed_variation = 0.0;
  double speed_period = 60.0;
  double duration = 0.0;  // 0: until the end of the path
  bool flat_earth = false;
};

/// Region along the path (arc length) whose appearance differs from the
/// mapped world once the world's change time has passed.
struct ChangeSpec {
  double s_start = 0.0;
  double s_end = 0.0;
  double decorrelation = 0.4;  // fraction of cells whose intensity is redrawn
  double blob_scale = 1.5;     // m, correlation length of the redrawn patches
  double new_intensity = 40.0;
  double new_contrast = 30.0;
  double marking_shift = 0.0;  // lateral shift of repainted markings (m)
  bool new_wall = true;
  double new_wall_offset = 3.0;  // lateral position (m, right of the path)
};

struct WorldSpec {
  double resolution = 0.125;
  std::uint32_t tile_dimension = 128;
  double corridor = 14.0;  // half width of the mapped band around the path

  double road_intensity = 60.0;
  double sidewalk_intensity = 110.0;
  double texture_sigma = 12.0;
  double correlation_length = 0.6;
  int texture_waves = 96;
  double marking_intensity = 80.0;
  double marking_width = 0.15;
  double dash_length = 3.0;
  double dash_gap = 6.0;
  double variance_structure = 0.5;

  bool relief = true;
  double ground_amplitude = 0.3;
  double ground_wavelength = 60.0;
  double road_half_width = 5.0;
  double curb_height = 0.15;
  double wall_offset = 7.0;
  double wall_height = 0.45;
  double wall_period = 30.0;
  double wall_duty = 0.6;
  double bollard_offset = 6.5;
  double bollard_spacing = 6.0;
  double bollard_height = 0.45;

  std::vector<ChangeSpec> changes;
  double change_time = 0.0;  // scans at or after this time see the changes
};

struct LidarSpec {
  double rate_hz = 5.0;
  double range = 8.0;
  double sparsity = 0.35;  // occupied fraction of cells in range
  int points_per_cell = 2;
  double sigma_intensity = 4.0;
  double sigma_altitude = 0.03;
  double latency_min = 0.05;
  double latency_max = 0.15;
};

struct MultipathWindow {
  TimeWindow window;
  double factor = 5.0;
};

struct SlipSpec {
  double t = 0.0;
  int satellite = 1;
  int cycles = 1;
};

struct GnssSpec {
  bool enabled = true;
  double rate_hz = 1.0;
  int satellites = 9;
  double min_elevation = 15.0 * kDeg;
  double sigma_range = 0.5;
  double sigma_phase = 0.003;
  double clock_sigma = 30.0;  // m, single-differenced receiver clock
  Vec2 base_offset{800.0, -600.0};  // base station east/north of the origin (m)
  double base_height = 0.0;         // relative to the origin altitude
  std::vector<TimeWindow> outages;
  std::vector<MultipathWindow> multipath;
  std::vector<SlipSpec> slips;
  double latency_min = 0.1;
  double latency_max = 0.3;
};

struct InitSpec {
  double sigma_position = 0.2;
  double sigma_velocity = 0.05;
  double sigma_attitude = 0.1 * kDeg;
  double sigma_heading = 0.3 * kDeg;
};

struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 1;
  TrajectorySpec trajectory;
  WorldSpec world;
  sins::ImuSpec imu = sins::tactical_imu();
  LidarSpec lidar;
  GnssSpec gnss;
  InitSpec init;
};

namespace detail {

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) fail(ErrorKind::input, where + ": expected an object");
  std::set<std::string> known(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) fail(ErrorKind::input, where + ": unknown key '" + k + "'");
}

template <typename T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void get_deg(const json& j, const char* key, double& out) {
  if (j.contains(key)) out = j.at(key).get<double>() * kDeg;
}

inline TimeWindow window_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) fail(ErrorKind::input, where + ": expected [t0, t1]");
  TimeWindow w{j[0].get<double>(), j[1].get<double>()};
  if (!(w.t1 > w.t0)) fail(ErrorKind::input, where + ": empty window");
  return w;
}

inline json window_to(const TimeWindow& w) { return json::array({w.t0, w.t1}); }

}  // namespace detail

/// Checks ranges that would make generation meaningless.
inline void validate(const Scenario& s) {
  const auto& tr = s.trajectory;
  if (tr.segments.empty()) fail(ErrorKind::input, "trajectory: no segments");
  for (const auto& seg : tr.segments)
    if (!(seg.length > 0.0) || !std::isfinite(seg.curvature)) fail(ErrorKind::input, "trajectory: bad segment");
  const bool stationary = tr.speed == 0.0 && tr.speed_variation == 0.0;
  if (!stationary && !(tr.speed - std::abs(tr.speed_variation) >= 0.5))
    fail(ErrorKind::input, "trajectory: speed must stay above 0.5 m/s (or be zero throughout)");
  if (!(tr.speed_period > 0.0)) fail(ErrorKind::input, "trajectory: speed_period must be positive");
  if (stationary && !(tr.duration > 0.0)) fail(ErrorKind::input, "trajectory: stationary runs need a duration");
  for (const auto& seg : tr.segments)
    if (std::abs(seg.curvature) * s.world.corridor >= 0.9)
      fail(ErrorKind::input, "trajectory: curvature too tight for the mapped corridor");
  if (!(s.world.resolution > 0.0) || !(s.world.correlation_length > 0.0) || s.world.texture_waves < 1)
    fail(ErrorKind::input, "world: bad texture parameters");
  for (const auto& c : s.world.changes)
    if (!(c.s_end > c.s_start) || c.decorrelation < 0.0 || c.decorrelation > 1.0)
      fail(ErrorKind::input, "world: bad change region");
  if (!(s.imu.rate_hz >= 10.0)) fail(ErrorKind::input, "imu: rate must be at least 10 Hz");
  if (!(s.lidar.rate_hz > 0.0) || !(s.lidar.range > 0.0) || s.lidar.sparsity <= 0.0 || s.lidar.sparsity > 1.0 ||
      s.lidar.points_per_cell < 1 || s.lidar.latency_max < s.lidar.latency_min || s.lidar.latency_min < 0.0)
    fail(ErrorKind::input, "lidar: bad parameters");
  if (s.gnss.enabled && (!(s.gnss.rate_hz > 0.0) || s.gnss.satellites < 2 || s.gnss.latency_min < 0.0 ||
                         s.gnss.latency_max < s.gnss.latency_min))
    fail(ErrorKind::input, "gnss: bad parameters");
  if (std::max(s.lidar.latency_max, s.gnss.latency_max) > 1.0)
    fail(ErrorKind::input, "latency above 1 s exceeds the filter history");
}

inline Scenario scenario_from_json(const json& j) {
  using detail::get;
  using detail::get_deg;
  Scenario s;
  detail::check_keys(j, "scenario", {"name", "seed", "trajectory", "world", "imu", "lidar", "gnss", "init"});
  get(j, "name", s.name);
  get(j, "seed", s.seed);
  if (j.contains("trajectory")) {
    const json& t = j["trajectory"];
    detail::check_keys(t, "trajectory",
                       {"origin", "start", "start_heading_deg", "segments", "speed", "speed_variation", "speed_period",
                        "duration", "flat_earth"});
    auto& tr = s.trajectory;
    if (t.contains("origin")) {
      const json& o = t["origin"];
      detail::check_keys(o, "trajectory.origin", {"lon_deg", "lat_deg", "alt"});
      get_deg(o, "lon_deg", tr.origin.lon);
      get_deg(o, "lat_deg", tr.origin.lat);
      get(o, "alt", tr.origin.alt);
    }
    if (t.contains("start")) tr.start = Vec2(t["start"].at(0).get<double>(), t["start"].at(1).get<double>());
    get_deg(t, "start_heading_deg", tr.start_heading);
    if (t.contains("segments")) {
      tr.segments.clear();
      for (const json& seg : t["segments"]) {
        detail::check_keys(seg, "trajectory.segments", {"length", "curvature"});
        SegmentSpec sp;
        get(seg, "length", sp.length);
        get(seg, "curvature", sp.curvature);
        tr.segments.push_back(sp);
      }
    }
    get(t, "speed", tr.speed);
    get(t, "speed_variation", tr.speed_variation);
    get(t, "speed_period", tr.speed_period);
    get(t, "duration", tr.duration);
    get(t, "flat_earth", tr.flat_earth);
  }
  if (j.contains("world")) {
    const json& w = j["world"];
    detail::check_keys(w, "world",
                       {"resolution", "tile_dimension", "corridor", "road_intensity", "sidewalk_intensity",
                        "texture_sigma", "correlation_length", "texture_waves", "marking_intensity", "marking_width",
                        "dash_length", "dash_gap", "variance_structure", "relief", "ground_amplitude",
                        "ground_wavelength", "road_half_width", "curb_height", "wall_offset", "wall_height",
                        "wall_period", "wall_duty", "bollard_offset", "bollard_spacing", "bollard_height", "changes", "change_time"});
    auto& ws = s.world;
    get(w, "resolution", ws.resolution);
    get(w, "tile_dimension", ws.tile_dimension);
    get(w, "corridor", ws.corridor);
    get(w, "road_intensity", ws.road_intensity);
    get(w, "sidewalk_intensity", ws.sidewalk_intensity);
    get(w, "texture_sigma", ws.texture_sigma);
    get(w, "correlation_length", ws.correlation_length);
    get(w, "texture_waves", ws.texture_waves);
    get(w, "marking_intensity", ws.marking_intensity);
    get(w, "marking_width", ws.marking_width);
    get(w, "dash_length", ws.dash_length);
    get(w, "dash_gap", ws.dash_gap);
    get(w, "variance_structure", ws.variance_structure);
    get(w, "relief", ws.relief);
    get(w, "ground_amplitude", ws.ground_amplitude);
    get(w, "ground_wavelength", ws.ground_wavelength);
    get(w, "road_half_width", ws.road_half_width);
    get(w, "curb_height", ws.curb_height);
    get(w, "wall_offset", ws.wall_offset);
    get(w, "wall_height", ws.wall_height);
    get(w, "wall_period", ws.wall_period);
    get(w, "wall_duty", ws.wall_duty);
    get(w, "bollard_offset", ws.bollard_offset);
    get(w, "bollard_spacing", ws.bollard_spacing);
    get(w, "bollard_height", ws.bollard_height);
    get(w, "change_time", ws.change_time);
    if (w.contains("changes"))
      for (const json& c : w["changes"]) {
        detail::check_keys(c, "world.changes",
                           {"s_start", "s_end", "decorrelation", "blob_scale", "new_intensity", "new_contrast",
                            "marking_shift", "new_wall", "new_wall_offset"});
        ChangeSpec cs;
        get(c, "s_start", cs.s_start);
        get(c, "s_end", cs.s_end);
        get(c, "decorrelation", cs.decorrelation);
        get(c, "blob_scale", cs.blob_scale);
        get(c, "new_intensity", cs.new_intensity);
        get(c, "new_contrast", cs.new_contrast);
        get(c, "marking_shift", cs.marking_shift);
        get(c, "new_wall", cs.new_wall);
        get(c, "new_wall_offset", cs.new_wall_offset);
        ws.changes.push_back(cs);
      }
  }
  if (j.contains("imu")) {
    const json& m = j["imu"];
    detail::check_keys(m, "imu",
                       {"rate_hz", "accel_vrw", "gyro_arw", "accel_bias_sigma", "gyro_bias_sigma", "accel_bias_walk",
                        "gyro_bias_walk"});
    get(m, "rate_hz", s.imu.rate_hz);
    get(m, "accel_vrw", s.imu.accel_vrw);
    get(m, "gyro_arw", s.imu.gyro_arw);
    get(m, "accel_bias_sigma", s.imu.accel_bias_sigma);
    get(m, "gyro_bias_sigma", s.imu.gyro_bias_sigma);
    get(m, "accel_bias_walk", s.imu.accel_bias_walk);
    get(m, "gyro_bias_walk", s.imu.gyro_bias_walk);
  }
  if (j.contains("lidar")) {
    const json& l = j["lidar"];
    detail::check_keys(l, "lidar",
                       {"rate_hz", "range", "sparsity", "points_per_cell", "sigma_intensity", "sigma_altitude",
                        "latency_min", "latency_max"});
    get(l, "rate_hz", s.lidar.rate_hz);
    get(l, "range", s.lidar.range);
    get(l, "sparsity", s.lidar.sparsity);
    get(l, "points_per_cell", s.lidar.points_per_cell);
    get(l, "sigma_intensity", s.lidar.sigma_intensity);
    get(l, "sigma_altitude", s.lidar.sigma_altitude);
    get(l, "latency_min", s.lidar.latency_min);
    get(l, "latency_max", s.lidar.latency_max);
  }
  if (j.contains("gnss")) {
    const json& g = j["gnss"];
    detail::check_keys(g, "gnss",
                       {"enabled", "rate_hz", "satellites", "min_elevation_deg", "sigma_range", "sigma_phase",
                        "clock_sigma", "base_offset", "base_height", "outages", "multipath", "slips", "latency_min",
                        "latency_max"});
    auto& gs = s.gnss;
    get(g, "enabled", gs.enabled);
    get(g, "rate_hz", gs.rate_hz);
    get(g, "satellites", gs.satellites);
    get_deg(g, "min_elevation_deg", gs.min_elevation);
    get(g, "sigma_range", gs.sigma_range);
    get(g, "sigma_phase", gs.sigma_phase);
    get(g, "clock_sigma", gs.clock_sigma);
    if (g.contains("base_offset"))
      gs.base_offset = Vec2(g["base_offset"].at(0).get<double>(), g["base_offset"].at(1).get<double>());
    get(g, "base_height", gs.base_height);
    if (g.contains("outages"))
      for (const json& w : g["outages"]) gs.outages.push_back(detail::window_from(w, "gnss.outages"));
    if (g.contains("multipath"))
      for (const json& m : g["multipath"]) {
        detail::check_keys(m, "gnss.multipath", {"window", "factor"});
        MultipathWindow mw;
        mw.window = detail::window_from(m.at("window"), "gnss.multipath");
        get(m, "factor", mw.factor);
        gs.multipath.push_back(mw);
      }
    if (g.contains("slips"))
      for (const json& m : g["slips"]) {
        detail::check_keys(m, "gnss.slips", {"t", "satellite", "cycles"});
        SlipSpec sl;
        get(m, "t", sl.t);
        get(m, "satellite", sl.satellite);
        get(m, "cycles", sl.cycles);
        gs.slips.push_back(sl);
      }
    get(g, "latency_min", gs.latency_min);
    get(g, "latency_max", gs.latency_max);
  }
  if (j.contains("init")) {
    const json& i = j["init"];
    detail::check_keys(i, "init", {"sigma_position", "sigma_velocity", "sigma_attitude_deg", "sigma_heading_deg"});
    get(i, "sigma_position", s.init.sigma_position);
    get(i, "sigma_velocity", s.init.sigma_velocity);
    get_deg(i, "sigma_attitude_deg", s.init.sigma_attitude);
    get_deg(i, "sigma_heading_deg", s.init.sigma_heading);
  }
  validate(s);
  return s;
}

inline json scenario_to_json(const Scenario& s) {
  json j;
  j["name"] = s.name;
  j["seed"] = s.seed;
  const auto& tr = s.trajectory;
  json segs = json::array();
  for (const auto& seg : tr.segments) segs.push_back({{"length", seg.length}, {"curvature", seg.curvature}});
  j["trajectory"] = {{"origin", {{"lon_deg", tr.origin.lon / kDeg}, {"lat_deg", tr.origin.lat / kDeg}, {"alt", tr.origin.alt}}},
                     {"start", {tr.start.x(), tr.start.y()}},
                     {"start_heading_deg", tr.start_heading / kDeg},
                     {"segments", segs},
                     {"speed", tr.speed},
                     {"speed_variation", tr.speed_variation},
                     {"speed_period", tr.speed_period},
                     {"duration", tr.duration},
                     {"flat_earth", tr.flat_earth}};
  const auto& w = s.world;
  json changes = json::array();
  for (const auto& c : w.changes)
    changes.push_back({{"s_start", c.s_start},
                       {"s_end", c.s_end},
                       {"decorrelation", c.decorrelation},
                       {"blob_scale", c.blob_scale},
                       {"new_intensity", c.new_intensity},
                       {"new_contrast", c.new_contrast},
                       {"marking_shift", c.marking_shift},
                       {"new_wall", c.new_wall},
                       {"new_wall_offset", c.new_wall_offset}});
  j["world"] = {{"resolution", w.resolution},
                {"tile_dimension", w.tile_dimension},
                {"corridor", w.corridor},
                {"road_intensity", w.road_intensity},
                {"sidewalk_intensity", w.sidewalk_intensity},
                {"texture_sigma", w.texture_sigma},
                {"correlation_length", w.correlation_length},
                {"texture_waves", w.texture_waves},
                {"marking_intensity", w.marking_intensity},
                {"marking_width", w.marking_width},
                {"dash_length", w.dash_length},
                {"dash_gap", w.dash_gap},
                {"variance_structure", w.variance_structure},
                {"relief", w.relief},
                {"ground_amplitude", w.ground_amplitude},
                {"ground_wavelength", w.ground_wavelength},
                {"road_half_width", w.road_half_width},
                {"curb_height", w.curb_height},
                {"wall_offset", w.wall_offset},
                {"wall_height", w.wall_height},
                {"wall_period", w.wall_period},
                {"wall_duty", w.wall_duty},
                {"bollard_offset", w.bollard_offset},
                {"bollard_spacing", w.bollard_spacing},
                {"bollard_height", w.bollard_height},
                {"changes", changes},
                {"change_time", w.change_time}};
  j["imu"] = {{"rate_hz", s.imu.rate_hz},
              {"accel_vrw", s.imu.accel_vrw},
              {"gyro_arw", s.imu.gyro_arw},
              {"accel_bias_sigma", s.imu.accel_bias_sigma},
              {"gyro_bias_sigma", s.imu.gyro_bias_sigma},
              {"accel_bias_walk", s.imu.accel_bias_walk},
              {"gyro_bias_walk", s.imu.gyro_bias_walk}};
  j["lidar"] = {{"rate_hz", s.lidar.rate_hz},
                {"range", s.lidar.range},
                {"sparsity", s.lidar.sparsity},
                {"points_per_cell", s.lidar.points_per_cell},
                {"sigma_intensity", s.lidar.sigma_intensity},
                {"sigma_altitude", s.lidar.sigma_altitude},
                {"latency_min", s.lidar.latency_min},
                {"latency_max", s.lidar.latency_max}};
  const auto& g = s.gnss;
  json outages = json::array(), mp = json::array(), slips = json::array();
  for (const auto& o : g.outages) outages.push_back(detail::window_to(o));
  for (const auto& m : g.multipath) mp.push_back({{"window", detail::window_to(m.window)}, {"factor", m.factor}});
  for (const auto& sl : g.slips) slips.push_back({{"t", sl.t}, {"satellite", sl.satellite}, {"cycles", sl.cycles}});
  j["gnss"] = {{"enabled", g.enabled},
               {"rate_hz", g.rate_hz},
               {"satellites", g.satellites},
               {"min_elevation_deg", g.min_elevation / kDeg},
               {"sigma_range", g.sigma_range},
               {"sigma_phase", g.sigma_phase},
               {"clock_sigma", g.clock_sigma},
               {"base_offset", {g.base_offset.x(), g.base_offset.y()}},
               {"base_height", g.base_height},
               {"outages", outages},
               {"multipath", mp},
               {"slips", slips},
               {"latency_min", g.latency_min},
               {"latency_max", g.latency_max}};
  j["init"] = {{"sigma_position", s.init.sigma_position},
               {"sigma_velocity", s.init.sigma_velocity},
               {"sigma_attitude_deg", s.init.sigma_attitude / kDeg},
               {"sigma_heading_deg", s.init.sigma_heading / kDeg}};
  return j;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::input, "cannot open scenario " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::input, "scenario " + path + ": " + e.what());
  }
  try {
    return scenario_from_json(j);
  } catch (const json::exception& e) {
    fail(ErrorKind::input, "scenario " + path + ": " + e.what());
  }
}

inline void save_scenario(const Scenario& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::input, "cannot write " + path);
  out << scenario_to_json(s).dump(2) << "\n";
}

}  // namespace fusionloc::sim
