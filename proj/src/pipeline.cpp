#include "fusionloc/pipeline/pipeline.hpp"

#include <chrono>
#include <fstream>

namespace fusionloc::pipeline {

PipelineConfig pipeline_config_from_json(const json& j) {
  PipelineConfig c;
  try {
    sim::detail::check_keys(j, "config",
                            {"lambda", "alpha", "beta", "window_half", "motion_sigma", "band_above", "band_below",
                             "intensity_var_floor", "altitude_var_floor", "heading_radius", "kappa_max", "horizon",
                             "output_rate_hz", "fixed_gamma", "gating", "gate_probability", "lidar_alt_var",
                             "lidar_heading_sigma_deg", "ratio_threshold", "use_float_gnss", "init_position",
                             "init_velocity", "init_attitude_deg", "init_heading_deg"});
    auto get = [&](const char* k, double& v) {
      if (j.contains(k)) v = j.at(k).get<double>();
    };
    auto& lc = c.localizer;
    get("lambda", lc.likelihood.lambda);
    get("alpha", lc.likelihood.alpha);
    get("beta", lc.likelihood.beta);
    lc.estimate.beta = lc.likelihood.beta;
    if (j.contains("window_half")) lc.window_half = j.at("window_half").get<int>();
    get("motion_sigma", lc.motion_sigma);
    get("band_above", lc.raster.band_above);
    get("band_below", lc.raster.band_below);
    get("intensity_var_floor", lc.raster.intensity_var_floor);
    get("altitude_var_floor", lc.raster.altitude_var_floor);
    get("heading_radius", lc.heading_radius);
    get("kappa_max", lc.posterior.kappa_max);
    get("horizon", c.horizon);
    get("output_rate_hz", c.output_rate_hz);
    get("fixed_gamma", c.fixed_gamma);
    if (j.contains("gating")) c.filter.gating = j.at("gating").get<bool>();
    get("gate_probability", c.filter.gate_probability);
    get("lidar_alt_var", c.filter.lidar_alt_var);
    if (j.contains("lidar_heading_sigma_deg"))
      c.filter.lidar_heading_var = square(j.at("lidar_heading_sigma_deg").get<double>() * kDeg);
    get("ratio_threshold", c.rtk.ratio_threshold);
    if (j.contains("use_float_gnss")) c.use_float_gnss = j.at("use_float_gnss").get<bool>();
    get("init_position", c.init_sigma.position_m);
    get("init_velocity", c.init_sigma.velocity);
    if (j.contains("init_attitude_deg")) c.init_sigma.attitude = j.at("init_attitude_deg").get<double>() * kDeg;
    if (j.contains("init_heading_deg")) c.init_sigma.heading = j.at("init_heading_deg").get<double>() * kDeg;
  } catch (const json::exception& e) {
    fail(ErrorKind::input, std::string("config: ") + e.what());
  }
  if (c.localizer.window_half < 2 || c.localizer.window_half > 60) fail(ErrorKind::input, "config: window_half out of range");
  if (!(c.output_rate_hz > 0.0) || !(c.horizon >= 1.0)) fail(ErrorKind::input, "config: bad output rate or horizon");
  return c;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::input, "cannot open config " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    fail(ErrorKind::input, "config " + path + ": " + e.what());
  }
  return pipeline_config_from_json(j);
}

namespace detail {

eval::NavRecord record_from(const sins::NavState& n, const eskf::Mat15* P, const geo::LocalProjection& proj) {
  eval::NavRecord r;
  r.t = n.t;
  r.r = n.r;
  r.xy = proj.forward(n.r);
  r.v_n = n.v_n;
  r.euler = n.euler();
  if (P) {
    const Vec3 m = sins::meters_per_unit(n.r);
    r.sigma_e = std::sqrt((*P)(0, 0)) * m.x();
    r.sigma_n = std::sqrt((*P)(1, 1)) * m.y();
  }
  return r;
}

bool on_output_grid(double t, double rate) {
  const double k = t * rate;
  return std::abs(k - std::round(k)) < 1e-6;
}

Vec3 to_ecef(const Vec3& r) { return geo::geodetic_to_ecef(geo::Geodetic::from(r)); }

Mat3 ecef_covariance(const Vec3& r, const Mat3& P_pos) {
  const Vec3 m = sins::meters_per_unit(r);
  const Mat3 cov_enu = m.asDiagonal() * P_pos * m.asDiagonal();
  const Mat3 Rn = geo::ecef_to_enu_rotation(r.x(), r.y());
  return Rn.transpose() * cov_enu * Rn;
}

enum class EventKind : int { imu = 0, gnss = 1, scan = 2 };

struct Event {
  double t;
  EventKind kind;
  std::size_t index;
};

std::vector<Event> arrival_order(const sim::Dataset& d, bool imu, bool scans, bool gnss) {
  std::vector<Event> ev;
  if (imu)
    for (std::size_t i = 0; i < d.imu.size(); ++i) ev.push_back({d.imu[i].t, EventKind::imu, i});
  if (scans)
    for (std::size_t i = 0; i < d.scans.size(); ++i) ev.push_back({d.scan_received[i], EventKind::scan, i});
  if (gnss)
    for (std::size_t i = 0; i < d.gnss.size(); ++i) ev.push_back({d.gnss_received[i], EventKind::gnss, i});
  std::stable_sort(ev.begin(), ev.end(), [](const Event& a, const Event& b) {
    if (a.t != b.t) return a.t < b.t;
    return static_cast<int>(a.kind) < static_cast<int>(b.kind);
  });
  return ev;
}

lidar::LocalizerConfig localizer_for(Mode mode, const PipelineConfig& cfg) {
  lidar::LocalizerConfig lc = cfg.localizer;
  switch (mode) {
    case Mode::intensity_only:
      lc.likelihood.fixed_gamma = 1.0;
      lc.estimate_heading = false;
      break;
    case Mode::heading_off:
      lc.estimate_heading = false;
      break;
    case Mode::fixed_gamma:
      lc.likelihood.fixed_gamma = cfg.fixed_gamma;
      break;
    default:
      break;
  }
  return lc;
}

}  // namespace detail

PipelineResult Pipeline::run(const sim::Dataset& d, Mode mode) const {
  const auto t0 = std::chrono::steady_clock::now();
  PipelineResult out;
  if (mode != Mode::gnss_only && map_ == nullptr) fail(ErrorKind::input, "mode " + mode_name(mode) + " needs a map");
  if (mode == Mode::gnss_only)
    gnss_only(d, out);
  else if (mode == Mode::lidar_only)
    lidar_only(d, out);
  else
    fused(d, mode, out);
  out.mode = mode;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

void Pipeline::require_tile(const Vec2& xy) const {
  const auto& g = map_->grid();
  if (!g.has_tile(g.tile_of(g.cell_of(xy))))
    fail(ErrorKind::input, "missing map tile at (" + std::to_string(xy.x()) + ", " + std::to_string(xy.y()) + ")");
}

void Pipeline::fused(const sim::Dataset& d, Mode mode, PipelineResult& out) const {
  const geo::LocalProjection proj(d.scenario.trajectory.origin);
  eskf::FilterConfig fc = cfg_.filter;
  fc.model = d.scenario.trajectory.flat_earth
                 ? geo::EarthModel::flat_model(d.scenario.trajectory.origin.lat, d.scenario.trajectory.origin.alt)
                 : geo::EarthModel::wgs84_model();
  if (cfg_.use_imu_spec_from_dataset) fc.imu = d.scenario.imu;
  eskf::ErrorStateFilter init;
  init.nav = d.init;
  init.P = eskf::initial_covariance(d.init, fc.imu, cfg_.init_sigma);
  eskf::DelayedFusion fusion(fc, init, cfg_.horizon);
  lidar::LidarLocalizer loc(*map_, detail::localizer_for(mode, cfg_));
  const bool use_gnss = mode == Mode::three_sys;

  std::uint64_t seq = 0;
  std::optional<std::pair<double, Vec3>> last_scan;  // time and velocity at the previous scan
  const gnss::GnssEpoch* prev_epoch = nullptr;
  Vec3 prev_epoch_x = Vec3::Zero();

  auto collect = [&](std::vector<eskf::TrajectoryRecord> recs) {
    for (const auto& r : recs)
      if (detail::on_output_grid(r.nav.t, cfg_.output_rate_hz))
        out.trajectory.push_back(detail::record_from(r.nav, &r.P, proj));
  };

  for (const detail::Event& e : detail::arrival_order(d, true, true, use_gnss)) {
    switch (e.kind) {
      case detail::EventKind::imu:
        fusion.push_imu(d.imu[e.index]);
        collect(fusion.take_finalized());
        break;
      case detail::EventKind::scan: {
        const map::Scan& scan = d.scans[e.index];
        const auto st = fusion.state_at(scan.t);
        if (!st) break;
        const double lead = scan.t - st->nav.t;
        const Vec3 r = eskf::predicted_position(st->nav, lead, fc.model);
        const Vec3 v = st->nav.v_n;
        const geo::Euler eul = st->nav.euler();
        const map::Pose6 prior{proj.forward(r).x(), proj.forward(r).y(), r.z(), eul.roll, eul.pitch, eul.heading};
        require_tile(prior.xy());
        std::optional<Vec2> disp;
        if (last_scan) disp = (0.5 * (v + last_scan->second) * (scan.t - last_scan->first)).head<2>();
        last_scan = {scan.t, v};
        LidarFixRecord rec;
        rec.t = scan.t;
        rec.t_received = d.scan_received[e.index];
        rec.prior = prior.xy();
        rec.prior_heading = prior.heading;
        try {
          const auto hrow = eskf::heading_row(st->nav.c_b_n());
          const double sigma_h = std::sqrt(std::max((hrow * st->P * hrow.transpose())(0, 0), 0.0));
          rec.fix = loc.localize(scan.points, prior, disp, sigma_h);
        } catch (const Error& err) {
          if (err.kind() != ErrorKind::input) throw;
          loc.reset();
          rec.fix.degraded = true;
          out.lidar.push_back(rec);
          break;
        }
        if (!rec.fix.degraded) {
          eskf::LidarPose lp;
          lp.r = proj.inverse(Vec2(rec.fix.x, rec.fix.y), rec.fix.alt);
          lp.heading = rec.fix.heading;
          lp.has_heading = rec.fix.heading_estimated;
          lp.cov_en = rec.fix.cov_xy;
          lp.alt_var = fc.lidar_alt_var;
          lp.heading_var = fc.lidar_heading_var;
          eskf::TimedMeasurement m;
          m.t_occurred = scan.t;
          m.t_received = rec.t_received;
          m.seq = seq++;
          m.data = lp;
          fusion.push_measurement(std::move(m));
          rec.used = true;
        }
        out.lidar.push_back(rec);
        break;
      }
      case detail::EventKind::gnss: {
        const gnss::GnssEpoch& ep = d.gnss[e.index];
        const auto st = fusion.state_at(ep.t);
        if (!st) break;
        const double lead = ep.t - st->nav.t;
        const Vec3 r = eskf::predicted_position(st->nav, lead, fc.model);
        const Vec3 x = detail::to_ecef(r);
        const gnss::PositionPrior prior{x, detail::ecef_covariance(r, st->P.block<3, 3>(eskf::kPos, eskf::kPos))};
        if (prev_epoch) {
          const gnss::PositionPrior inc{x - prev_epoch_x, prior.cov};
          const gnss::SlipDetection sd = gnss::detect_cycle_slips(*prev_epoch, ep, prev_epoch_x, inc, cfg_.rtk);
          out.slips_detected += sd.reliable ? sd.slips.size() : 0;
        }
        prev_epoch = &ep;
        prev_epoch_x = x;
        GnssFixRecord rec;
        rec.t = ep.t;
        rec.t_received = d.gnss_received[e.index];
        try {
          const gnss::RtkSolution sol = gnss::ins_aided_solution(ep, x, prior, cfg_.rtk);
          rec.fixed = sol.fixed;
          rec.aided = sol.ins_dependent;
          rec.ratio = sol.ratio;
          rec.cov_enu = sol.cov_enu;
          const Vec3 rg = sol.position.vec();
          rec.xy = proj.forward(rg);
          if ((sol.fixed || cfg_.use_float_gnss) && !sol.ins_dependent) {
            eskf::TimedMeasurement m;
            m.t_occurred = ep.t;
            m.t_received = rec.t_received;
            m.seq = seq++;
            m.data = eskf::GnssPosition{rg, sol.cov_enu, sol.fixed};
            fusion.push_measurement(std::move(m));
            rec.used = true;
          }
        } catch (const Error& err) {
          if (err.kind() != ErrorKind::numerical) throw;
        }
        out.gnss.push_back(rec);
        break;
      }
    }
  }
  collect(fusion.flush());
  out.log = fusion.log();
}

void Pipeline::lidar_only(const sim::Dataset& d, PipelineResult& out) const {
  const geo::LocalProjection proj(d.scenario.trajectory.origin);
  lidar::LidarLocalizer loc(*map_, detail::localizer_for(Mode::two_sys, cfg_));
  Vec2 xy = proj.forward(d.init.r);
  Vec2 vel = d.init.v_n.head<2>();
  double heading = d.init.heading(), t_prev = d.init.t;
  for (std::size_t i = 0; i < d.scans.size(); ++i) {
    const map::Scan& scan = d.scans[i];
    const double dt = scan.t - t_prev;
    const Vec2 disp = vel * dt;
    const Vec2 c = xy + disp;
    require_tile(c);
    const Vec2 fwd(std::sin(heading), std::cos(heading)), right(std::cos(heading), -std::sin(heading));
    const double pitch = std::atan2(map_->altitude_at(c.x() + fwd.x(), c.y() + fwd.y()) -
                                        map_->altitude_at(c.x() - fwd.x(), c.y() - fwd.y()),
                                    2.0);
    const double roll = std::atan2(map_->altitude_at(c.x() - right.x(), c.y() - right.y()) -
                                       map_->altitude_at(c.x() + right.x(), c.y() + right.y()),
                                   2.0);
    const map::Pose6 prior{c.x(), c.y(), 0.0, roll, pitch, heading};
    LidarFixRecord rec;
    rec.t = scan.t;
    rec.t_received = d.scan_received[i];
    rec.prior = prior.xy();
    rec.prior_heading = heading;
    try {
      rec.fix = loc.localize(scan.points, prior, i == 0 ? std::nullopt : std::optional<Vec2>(disp));
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::input) throw;
      loc.reset();
      rec.fix.degraded = true;
    }
    Vec2 next = prior.xy();
    if (!rec.fix.degraded) {
      next = Vec2(rec.fix.x, rec.fix.y);
      heading = rec.fix.heading;
      rec.used = true;
    }
    if (dt > 0.0) vel = (next - xy) / dt;
    xy = next;
    t_prev = scan.t;
    out.lidar.push_back(rec);

    eval::NavRecord n;
    n.t = scan.t;
    n.xy = xy;
    const double alt = rec.fix.degraded ? d.init.r.z() : rec.fix.alt;
    n.r = proj.inverse(xy, alt);
    n.v_n = Vec3(vel.x(), vel.y(), 0.0);
    n.euler = {0.0, 0.0, heading};
    n.sigma_e = std::sqrt(rec.fix.cov_xy(0, 0));
    n.sigma_n = std::sqrt(rec.fix.cov_xy(1, 1));
    out.trajectory.push_back(n);
  }
}

void Pipeline::gnss_only(const sim::Dataset& d, PipelineResult& out) const {
  const geo::LocalProjection proj(d.scenario.trajectory.origin);
  Vec3 x = detail::to_ecef(d.init.r);
  for (std::size_t i = 0; i < d.gnss.size(); ++i) {
    const gnss::GnssEpoch& ep = d.gnss[i];
    GnssFixRecord rec;
    rec.t = ep.t;
    rec.t_received = d.gnss_received[i];
    gnss::RtkSolution sol;
    try {
      sol = gnss::rtk_solution(ep, x, cfg_.rtk);
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::numerical) throw;
      out.gnss.push_back(rec);
      continue;
    }
    x = sol.position_ecef;
    rec.fixed = sol.fixed;
    rec.ratio = sol.ratio;
    rec.cov_enu = sol.cov_enu;
    rec.xy = proj.forward(sol.position.vec());
    rec.used = true;
    out.gnss.push_back(rec);

    eval::NavRecord n;
    n.t = ep.t;
    n.r = sol.position.vec();
    n.xy = rec.xy;
    n.sigma_e = std::sqrt(sol.cov_enu(0, 0));
    n.sigma_n = std::sqrt(sol.cov_enu(1, 1));
    out.trajectory.push_back(n);
  }
}

void save_measurement_log(const std::string& path, const std::vector<eskf::MeasurementLogEntry>& log) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::input, "cannot write " + path);
  os << "seq,kind,t_occurred,t_received,status,nis,replay_depth\n";
  os.precision(17);
  for (const auto& e : log)
    os << e.seq << ',' << (e.kind == eskf::MeasurementKind::lidar ? "lidar" : "gnss") << ',' << e.t_occurred << ','
       << e.t_received << ',' << e.status << ',' << e.nis << ',' << e.replay_depth << '\n';
}

void save_lidar_fixes(const std::string& path, const std::vector<LidarFixRecord>& fixes) {
  CsvWriter w(path, {"t", "t_received", "prior_x", "prior_y", "prior_heading_deg", "x", "y", "heading_deg", "cov_xx",
                     "cov_xy", "cov_yy", "gamma", "kappa", "n_z", "heading_estimated", "degraded", "used"});
  for (const auto& r : fixes)
    w.row({r.t, r.t_received, r.prior.x(), r.prior.y(), r.prior_heading / kDeg, r.fix.x, r.fix.y, r.fix.heading / kDeg,
           r.fix.cov_xy(0, 0), r.fix.cov_xy(0, 1), r.fix.cov_xy(1, 1), r.fix.gamma, r.fix.kappa,
           static_cast<double>(r.fix.n_z), r.fix.heading_estimated ? 1.0 : 0.0, r.fix.degraded ? 1.0 : 0.0,
           r.used ? 1.0 : 0.0});
}

void save_gnss_fixes(const std::string& path, const std::vector<GnssFixRecord>& fixes) {
  CsvWriter w(path, {"t", "t_received", "x", "y", "var_e", "var_n", "var_u", "fixed", "ins_dependent", "ratio", "used"});
  for (const auto& r : fixes)
    w.row({r.t, r.t_received, r.xy.x(), r.xy.y(), r.cov_enu(0, 0), r.cov_enu(1, 1), r.cov_enu(2, 2), r.fixed ? 1.0 : 0.0,
           r.aided ? 1.0 : 0.0, r.ratio, r.used ? 1.0 : 0.0});
}

}  // namespace fusionloc::pipeline
