#pragma once

#include "fusionloc/core/csv.hpp"
#include "fusionloc/geo/attitude.hpp"

#include <limits>
#include <vector>

namespace fusionloc::eval {

/// One row of a trajectory file. Truth and estimates share the format;
/// sigma_e / sigma_n are NaN where no covariance exists.
struct NavRecord {
  double t = 0.0;
  Vec3 r = Vec3::Zero();  // lon, lat (rad), alt (m)
  Vec2 xy = Vec2::Zero();  // map frame (m)
  Vec3 v_n = Vec3::Zero();
  geo::Euler euler;
  double sigma_e = std::numeric_limits<double>::quiet_NaN();
  double sigma_n = std::numeric_limits<double>::quiet_NaN();
};

inline const std::vector<std::string>& trajectory_columns() {
  static const std::vector<std::string> cols{"t",     "lon_deg", "lat_deg",  "alt",       "x",           "y",       "v_e",
                                             "v_n",   "v_u",     "roll_deg", "pitch_deg", "heading_deg", "sigma_e", "sigma_n"};
  return cols;
}

inline void save_trajectory(const std::string& path, const std::vector<NavRecord>& recs) {
  CsvWriter w(path, trajectory_columns());
  for (const NavRecord& n : recs)
    w.row({n.t, n.r.x() / kDeg, n.r.y() / kDeg, n.r.z(), n.xy.x(), n.xy.y(), n.v_n.x(), n.v_n.y(), n.v_n.z(),
           n.euler.roll / kDeg, n.euler.pitch / kDeg, n.euler.heading / kDeg, n.sigma_e, n.sigma_n});
}

inline std::vector<NavRecord> load_trajectory(const std::string& path) {
  const CsvTable t = read_csv(path);
  std::vector<std::size_t> c;
  for (const auto& name : trajectory_columns()) c.push_back(t.column(name));
  std::vector<NavRecord> out;
  out.reserve(t.rows.size());
  for (const auto& row : t.rows) {
    NavRecord n;
    n.t = row[c[0]];
    n.r = Vec3(row[c[1]] * kDeg, row[c[2]] * kDeg, row[c[3]]);
    n.xy = Vec2(row[c[4]], row[c[5]]);
    n.v_n = Vec3(row[c[6]], row[c[7]], row[c[8]]);
    n.euler = {row[c[9]] * kDeg, row[c[10]] * kDeg, row[c[11]] * kDeg};
    n.sigma_e = row[c[12]];
    n.sigma_n = row[c[13]];
    out.push_back(n);
  }
  for (std::size_t i = 1; i < out.size(); ++i)
    if (!(out[i].t > out[i - 1].t)) fail(ErrorKind::input, path + ": timestamps not increasing");
  return out;
}

}  // namespace fusionloc::eval
