#pragma once

#include "fusionloc/map/lidar_map.hpp"

#include <map>
#include <span>
#include <vector>

namespace fusionloc::map {

/// Sparse grid built from one scan. Only occupied cells are stored, sorted
/// by (j, i).
struct OnlineCell {
  CellIndex index;
  GridCellStats stats;
};

struct OnlineGrid {
  double resolution = 0.125;
  Pose6 anchor;
  std::vector<OnlineCell> cells;
  std::uint64_t rejected_band = 0;
  std::uint64_t rejected_nonfinite = 0;

  std::size_t valid_cell_count() const { return cells.size(); }
};

/// Bins a scan into map cells after transforming it with `pose`. The ground
/// band is taken around pose.alt, which callers set from the map altitude.
inline OnlineGrid rasterize_online(std::span<const ScanPoint> points, const Pose6& pose, const RasterParams& params) {
  if (!pose.finite()) fail(ErrorKind::input, "pose is not finite");
  if (!(params.resolution > 0.0)) fail(ErrorKind::input, "resolution must be positive");
  OnlineGrid grid;
  grid.resolution = params.resolution;
  grid.anchor = pose;
  const PoseTransform tf(pose, params.sensor_height);
  std::map<CellIndex, RunningCell> acc;
  for (const ScanPoint& p : points) {
    if (!p.finite()) {
      ++grid.rejected_nonfinite;
      continue;
    }
    const Vec3 w = tf.apply(p);
    if (!in_ground_band(w.z(), pose.alt, params)) {
      ++grid.rejected_band;
      continue;
    }
    const CellIndex c{static_cast<std::int64_t>(std::floor(w.x() / params.resolution)),
                      static_cast<std::int64_t>(std::floor(w.y() / params.resolution))};
    RunningCell& rc = acc[c];
    rc.intensity.add(p.intensity);
    rc.altitude.add(w.z());
  }
  if (acc.empty()) fail(ErrorKind::input, "empty scan");
  grid.cells.reserve(acc.size());
  for (const auto& [c, rc] : acc) grid.cells.push_back({c, to_cell_stats(rc, params)});
  return grid;
}

}  // namespace fusionloc::map
