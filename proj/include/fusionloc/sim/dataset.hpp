#pragma once

#include "fusionloc/eval/trajectory_io.hpp"
#include "fusionloc/gnss/epoch_io.hpp"
#include "fusionloc/map/point_cloud_io.hpp"
#include "fusionloc/map/tile_io.hpp"
#include "fusionloc/sim/imu_synth.hpp"
#include "fusionloc/sim/sensors.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace fusionloc::sim {

struct Dataset {
  Scenario scenario;
  std::vector<eval::NavRecord> truth;  // at IMU rate, starting at t = 0
  std::vector<sins::ImuSample> imu;
  std::vector<map::Scan> scans;
  std::vector<double> scan_received;
  std::vector<gnss::GnssEpoch> gnss;
  std::vector<double> gnss_received;
  sins::NavState init;  // perturbed truth at t = 0
};

inline eval::NavRecord nav_record(const TruthState& st) {
  eval::NavRecord n;
  n.t = st.t;
  n.r = st.r;
  n.xy = st.xy;
  n.v_n = st.v_n;
  n.euler = st.euler;
  return n;
}

/// Everything derived from a scenario. Holds references between its
/// members, so it is neither copyable nor movable.
class Simulation {
 public:
  explicit Simulation(const Scenario& sc)
      : sc_((validate(sc), sc)),
        terrain_(sc.world, sc.trajectory.origin.alt, sc.seed),
        traj_(sc.trajectory, terrain_),
        world_(sc, traj_.path(), traj_.terrain()) {}
  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  const Scenario& scenario() const { return sc_; }
  const Trajectory& trajectory() const { return traj_; }
  const World& world() const { return world_; }

  WorldMaps generate_world() const { return world_.generate(); }

  sins::NavState initial_state() const {
    const TruthState st = traj_.at(0.0);
    CounterRng rng(sc_.seed, CounterRng::stream_id("init"));
    const InitSpec& is = sc_.init;
    const geo::LocalProjection& proj = traj_.projection();
    sins::NavState n = st.nav();
    const Vec2 dxy(rng.gaussian(is.sigma_position), rng.gaussian(is.sigma_position));
    n.r = proj.inverse(st.xy + dxy, st.r.z() + rng.gaussian(is.sigma_position));
    for (int i = 0; i < 3; ++i) n.v_n(i) += rng.gaussian(is.sigma_velocity);
    geo::Euler e = st.euler;
    e.roll += rng.gaussian(is.sigma_attitude);
    e.pitch += rng.gaussian(is.sigma_attitude);
    e.heading = wrap_angle(e.heading + rng.gaussian(is.sigma_heading));
    n.q_b_n = geo::quat_from_euler(e);
    return n;
  }

  std::vector<eval::NavRecord> truth() const {
    const double dt = 1.0 / sc_.imu.rate_hz;
    const auto n = static_cast<std::size_t>(std::floor(traj_.duration() * sc_.imu.rate_hz + 1e-9));
    std::vector<eval::NavRecord> out;
    out.reserve(n + 1);
    for (std::size_t k = 0; k <= n; ++k) out.push_back(nav_record(traj_.at(static_cast<double>(k) * dt)));
    return out;
  }

  /// Scans at k / rate for k >= 1, with their receive times. Empty scans
  /// (off the mapped corridor) are dropped.
  void scans(const WorldMaps& maps, std::vector<map::Scan>& out, std::vector<double>& received) const {
    const LidarSpec& ls = sc_.lidar;
    const auto n = static_cast<std::size_t>(std::floor(traj_.duration() * ls.rate_hz + 1e-9));
    const CounterRng lat(sc_.seed, CounterRng::stream_id("lidar_latency"));
    for (std::size_t k = 1; k <= n; ++k) {
      const double t = static_cast<double>(k) / ls.rate_hz;
      const TruthState st = traj_.at(t);
      map::Scan scan = synthesize_scan(st, maps, t >= sc_.world.change_time, ls, sc_.seed, k);
      if (scan.points.empty()) continue;
      out.push_back(std::move(scan));
      received.push_back(t + ls.latency_min + (ls.latency_max - ls.latency_min) * lat.uniform_at(k));
    }
  }

  Constellation constellation() const { return Constellation(sc_.gnss, sc_.trajectory.origin, sc_.seed); }

  /// Epochs at k / rate for k >= 1, skipping outage windows.
  void gnss(std::vector<gnss::GnssEpoch>& out, std::vector<double>& received) const {
    const GnssSpec& gs = sc_.gnss;
    if (!gs.enabled) return;
    const Constellation sky = constellation();
    const CounterRng noise(sc_.seed, CounterRng::stream_id("gnss_noise"));
    const CounterRng lat(sc_.seed, CounterRng::stream_id("gnss_latency"));
    const auto n = static_cast<std::size_t>(std::floor(traj_.duration() * gs.rate_hz + 1e-9));
    for (std::size_t k = 1; k <= n; ++k) {
      const double t = static_cast<double>(k) / gs.rate_hz;
      bool out_of_service = false;
      for (const auto& w : gs.outages) out_of_service |= w.contains(t);
      if (out_of_service) continue;
      double factor = 1.0;
      for (const auto& m : gs.multipath)
        if (m.window.contains(t)) factor = std::max(factor, m.factor);
      const TruthState st = traj_.at(t);
      const Vec3 rover = geo::geodetic_to_ecef(geo::Geodetic::from(st.r));
      out.push_back(synthesize_epoch(sky, rover, t, ambiguities_at(sky, gs, t), gs, factor, noise, 128 * k));
      received.push_back(t + gs.latency_min + (gs.latency_max - gs.latency_min) * lat.uniform_at(k));
    }
  }

  Dataset run(const WorldMaps& maps) const {
    Dataset d;
    d.scenario = sc_;
    d.truth = truth();
    d.imu = synthesize_imu(traj_, sc_.imu, sc_.seed).samples;
    scans(maps, d.scans, d.scan_received);
    gnss(d.gnss, d.gnss_received);
    d.init = initial_state();
    return d;
  }

 private:
  Scenario sc_;
  Terrain terrain_;
  Trajectory traj_;
  World world_;
};

namespace detail {

inline void save_schedule(const std::string& path, const std::vector<double>& t, const std::vector<double>& rx) {
  CsvWriter w(path, {"t", "t_received"});
  for (std::size_t i = 0; i < t.size(); ++i) w.row({t[i], rx[i]});
}

inline std::vector<double> load_schedule(const std::string& path, const std::vector<double>& expected_t) {
  const CsvTable tab = read_csv(path);
  if (tab.rows.size() != expected_t.size()) fail(ErrorKind::input, path + ": row count does not match data");
  const std::size_t ct = tab.column("t"), cr = tab.column("t_received");
  std::vector<double> rx;
  for (std::size_t i = 0; i < tab.rows.size(); ++i) {
    if (std::abs(tab.rows[i][ct] - expected_t[i]) > 1e-6) fail(ErrorKind::input, path + ": timestamps do not match data");
    if (tab.rows[i][cr] < tab.rows[i][ct]) fail(ErrorKind::input, path + ": received before occurred");
    rx.push_back(tab.rows[i][cr]);
  }
  return rx;
}

}  // namespace detail

inline void save_init(const std::string& path, const sins::NavState& n) {
  const geo::Euler e = n.euler();
  const json j{{"t", n.t},
               {"lon_deg", n.r.x() / kDeg},
               {"lat_deg", n.r.y() / kDeg},
               {"alt", n.r.z()},
               {"v_enu", {n.v_n.x(), n.v_n.y(), n.v_n.z()}},
               {"roll_deg", e.roll / kDeg},
               {"pitch_deg", e.pitch / kDeg},
               {"heading_deg", e.heading / kDeg}};
  std::ofstream os(path);
  if (!os) fail(ErrorKind::input, "cannot write " + path);
  os << j.dump(2) << '\n';
}

inline sins::NavState load_init(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::input, "cannot open " + path);
  try {
    const json j = json::parse(is);
    detail::check_keys(j, "init", {"t", "lon_deg", "lat_deg", "alt", "v_enu", "roll_deg", "pitch_deg", "heading_deg"});
    sins::NavState n;
    n.t = j.at("t").get<double>();
    n.r = Vec3(j.at("lon_deg").get<double>() * kDeg, j.at("lat_deg").get<double>() * kDeg, j.at("alt").get<double>());
    const auto v = j.at("v_enu").get<std::vector<double>>();
    if (v.size() != 3) fail(ErrorKind::input, "init: v_enu needs 3 components");
    n.v_n = Vec3(v[0], v[1], v[2]);
    n.q_b_n = geo::quat_from_euler({j.at("roll_deg").get<double>() * kDeg, j.at("pitch_deg").get<double>() * kDeg,
                                    j.at("heading_deg").get<double>() * kDeg});
    if (!n.finite()) fail(ErrorKind::input, "init: non-finite state");
    return n;
  } catch (const json::exception& ex) {
    fail(ErrorKind::input, std::string("init: ") + ex.what());
  }
}

inline void save_imu(const std::string& path, const std::vector<sins::ImuSample>& imu) {
  CsvWriter w(path, {"t", "wx", "wy", "wz", "fx", "fy", "fz"});
  for (const auto& s : imu)
    w.row({s.t, s.omega_ib_b.x(), s.omega_ib_b.y(), s.omega_ib_b.z(), s.f_b.x(), s.f_b.y(), s.f_b.z()});
}

inline std::vector<sins::ImuSample> load_imu(const std::string& path) {
  const CsvTable tab = read_csv(path);
  std::vector<std::size_t> c;
  for (const char* name : {"t", "wx", "wy", "wz", "fx", "fy", "fz"}) c.push_back(tab.column(name));
  std::vector<sins::ImuSample> out;
  out.reserve(tab.rows.size());
  for (const auto& r : tab.rows) {
    sins::ImuSample s;
    s.t = r[c[0]];
    s.omega_ib_b = Vec3(r[c[1]], r[c[2]], r[c[3]]);
    s.f_b = Vec3(r[c[4]], r[c[5]], r[c[6]]);
    if (!s.finite()) fail(ErrorKind::input, path + ": non-finite sample");
    if (!out.empty() && !(s.t > out.back().t)) fail(ErrorKind::input, path + ": timestamps not increasing");
    out.push_back(s);
  }
  return out;
}

/// Dataset directory layout: scenario.json, truth.csv, imu.csv, scans.bin +
/// lidar_schedule.csv, gnss.txt + gnss_schedule.csv, init.json.
inline void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_scenario(d.scenario, (dir / "scenario.json").string());
  eval::save_trajectory((dir / "truth.csv").string(), d.truth);
  save_imu((dir / "imu.csv").string(), d.imu);
  map::save_scans(d.scans, (dir / "scans.bin").string());
  std::vector<double> ts;
  for (const auto& s : d.scans) ts.push_back(s.t);
  detail::save_schedule((dir / "lidar_schedule.csv").string(), ts, d.scan_received);
  gnss::save_epochs((dir / "gnss.txt").string(), d.gnss);
  ts.clear();
  for (const auto& e : d.gnss) ts.push_back(e.t);
  detail::save_schedule((dir / "gnss_schedule.csv").string(), ts, d.gnss_received);
  save_init((dir / "init.json").string(), d.init);
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorKind::input, "dataset directory not found: " + dir.string());
  Dataset d;
  d.scenario = load_scenario((dir / "scenario.json").string());
  d.truth = eval::load_trajectory((dir / "truth.csv").string());
  d.imu = load_imu((dir / "imu.csv").string());
  d.scans = map::load_scans((dir / "scans.bin").string());
  std::vector<double> ts;
  for (const auto& s : d.scans) ts.push_back(s.t);
  d.scan_received = detail::load_schedule((dir / "lidar_schedule.csv").string(), ts);
  d.gnss = gnss::load_epochs((dir / "gnss.txt").string());
  ts.clear();
  for (const auto& e : d.gnss) ts.push_back(e.t);
  d.gnss_received = detail::load_schedule((dir / "gnss_schedule.csv").string(), ts);
  d.init = load_init((dir / "init.json").string());
  return d;
}

}  // namespace fusionloc::sim
