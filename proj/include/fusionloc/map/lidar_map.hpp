#pragma once

#include "fusionloc/core/types.hpp"
#include "fusionloc/map/grid.hpp"
#include "fusionloc/map/point_cloud.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>

namespace fusionloc::map {

/// Single-pass (Welford) mean and population variance.
struct RunningStats {
  std::uint64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  // Chan et al. parallel combination.
  void merge(const RunningStats& o) {
    if (o.n == 0) return;
    if (n == 0) {
      *this = o;
      return;
    }
    const double na = static_cast<double>(n), nb = static_cast<double>(o.n);
    const double d = o.mean - mean;
    const double nt = na + nb;
    mean += d * nb / nt;
    m2 += o.m2 + d * d * na * nb / nt;
    n += o.n;
  }
  double variance() const { return n == 0 ? 0.0 : m2 / static_cast<double>(n); }
};

struct RunningCell {
  RunningStats intensity;
  RunningStats altitude;
};

struct AccumulatorDiagnostics {
  std::uint64_t accepted = 0;
  std::uint64_t rejected_nonfinite = 0;
  std::uint64_t rejected_band = 0;
};

/// Converts running statistics into a stored cell, applying variance floors.
inline GridCellStats to_cell_stats(const RunningCell& rc, const RasterParams& params) {
  GridCellStats s;
  s.sample_count = static_cast<std::uint32_t>(std::min<std::uint64_t>(rc.intensity.n, UINT32_MAX));
  if (s.sample_count == 0) return s;
  s.intensity_mean = static_cast<float>(std::clamp(rc.intensity.mean, 0.0, 255.0));
  s.intensity_var = static_cast<float>(std::max(rc.intensity.variance(), params.intensity_var_floor));
  s.altitude_mean = static_cast<float>(rc.altitude.mean);
  s.altitude_var = static_cast<float>(std::max(rc.altitude.variance(), params.altitude_var_floor));
  return s;
}

/// Map building state: accumulates ground-band returns from registered scans.
/// Single writer.
class MapAccumulator {
 public:
  explicit MapAccumulator(const RasterParams& params = {}, std::uint32_t tile_dimension = 1024)
      : params_(params), grid_(params.resolution, tile_dimension) {}

  const RasterParams& params() const { return params_; }
  double resolution() const { return params_.resolution; }
  std::uint32_t tile_dimension() const { return grid_.dimension(); }
  const AccumulatorDiagnostics& diagnostics() const { return diag_; }
  const TiledGrid<RunningCell>& grid() const { return grid_; }

  /// Adds one sample already expressed in the map frame.
  void add_sample(double x, double y, double z, double intensity) {
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z) || !std::isfinite(intensity)) {
      ++diag_.rejected_nonfinite;
      return;
    }
    RunningCell& cell = grid_.at(grid_.cell_of(x, y));
    cell.intensity.add(intensity);
    cell.altitude.add(z);
    ++diag_.accepted;
  }

  /// Transforms a scan with its (ground-truth) pose and accumulates the
  /// returns inside the ground band.
  void accumulate_scan(std::span<const ScanPoint> points, const Pose6& pose) {
    if (!pose.finite()) fail(ErrorKind::input, "pose is not finite");
    const PoseTransform tf(pose, params_.sensor_height);
    for (const ScanPoint& p : points) {
      if (!p.finite()) {
        ++diag_.rejected_nonfinite;
        continue;
      }
      const Vec3 w = tf.apply(p);
      if (!in_ground_band(w.z(), pose.alt, params_)) {
        ++diag_.rejected_band;
        continue;
      }
      add_sample(w.x(), w.y(), w.z(), p.intensity);
    }
  }

  void merge(const MapAccumulator& other) {
    if (other.resolution() != resolution() || other.tile_dimension() != tile_dimension())
      fail(ErrorKind::input, "accumulator resolution mismatch");
    for (const auto& [index, tile] : other.grid_.tiles()) {
      for (std::uint32_t j = 0; j < tile.dimension; ++j) {
        for (std::uint32_t i = 0; i < tile.dimension; ++i) {
          const RunningCell& src = tile.at(i, j);
          if (src.intensity.n == 0) continue;
          const CellIndex c{static_cast<std::int64_t>(index.x) * tile.dimension + i,
                            static_cast<std::int64_t>(index.y) * tile.dimension + j};
          RunningCell& dst = grid_.at(c);
          dst.intensity.merge(src.intensity);
          dst.altitude.merge(src.altitude);
        }
      }
    }
    diag_.accepted += other.diag_.accepted;
    diag_.rejected_nonfinite += other.diag_.rejected_nonfinite;
    diag_.rejected_band += other.diag_.rejected_band;
  }

 private:
  RasterParams params_;
  TiledGrid<RunningCell> grid_;
  AccumulatorDiagnostics diag_;
};

/// Immutable tiled map of intensity/altitude statistics. Safe for concurrent
/// readers.
class LidarMap {
 public:
  LidarMap() = default;
  explicit LidarMap(TiledGrid<GridCellStats> grid) : grid_(std::move(grid)) {}

  double resolution() const { return grid_.resolution(); }
  const TiledGrid<GridCellStats>& grid() const { return grid_; }
  TiledGrid<GridCellStats>& mutable_grid() { return grid_; }

  std::optional<GridCellStats> query(double x, double y) const { return query(grid_.cell_of(x, y)); }
  std::optional<GridCellStats> query(const CellIndex& c) const {
    const GridCellStats* s = grid_.find(c);
    if (s == nullptr || s->empty()) return std::nullopt;
    return *s;
  }
  const GridCellStats* find(const CellIndex& c) const { return grid_.find(c); }

  /// Road-surface altitude at (x, y). Falls back to the nearest occupied
  /// cell within `radius_cells` (ties broken by row, then column).
  double altitude_at(double x, double y, int radius_cells = 8) const {
    const CellIndex c = grid_.cell_of(x, y);
    if (auto s = query(c)) return s->altitude_mean;
    std::int64_t best_d2 = std::numeric_limits<std::int64_t>::max();
    double best = 0.0;
    const std::int64_t r2 = static_cast<std::int64_t>(radius_cells) * radius_cells;
    for (std::int64_t dj = -radius_cells; dj <= radius_cells; ++dj) {
      for (std::int64_t di = -radius_cells; di <= radius_cells; ++di) {
        const std::int64_t d2 = di * di + dj * dj;
        if (d2 > r2 || d2 >= best_d2) continue;
        if (auto s = query(CellIndex{c.i + di, c.j + dj})) {
          best_d2 = d2;
          best = s->altitude_mean;
        }
      }
    }
    if (best_d2 == std::numeric_limits<std::int64_t>::max()) fail(ErrorKind::unavailable, "altitude unavailable");
    return best;
  }

  std::size_t occupied_cells() const {
    std::size_t n = 0;
    for (const auto& [idx, tile] : grid_.tiles())
      for (const auto& cell : tile.cells) n += cell.empty() ? 0 : 1;
    return n;
  }

  friend bool operator==(const LidarMap& a, const LidarMap& b) { return a.grid_ == b.grid_; }

 private:
  TiledGrid<GridCellStats> grid_;
};

/// Freezes an accumulator into a map. Tiles without any occupied cell are
/// dropped.
inline LidarMap finalize_map(const MapAccumulator& acc) {
  TiledGrid<GridCellStats> grid(acc.resolution(), acc.tile_dimension());
  bool any = false;
  for (const auto& [index, tile] : acc.grid().tiles()) {
    Tile<GridCellStats> out;
    out.index = index;
    out.resolution = tile.resolution;
    out.dimension = tile.dimension;
    out.cells.resize(tile.cells.size());
    bool tile_any = false;
    for (std::size_t k = 0; k < tile.cells.size(); ++k) {
      out.cells[k] = to_cell_stats(tile.cells[k], acc.params());
      tile_any = tile_any || !out.cells[k].empty();
    }
    if (tile_any) {
      grid.insert_tile(std::move(out));
      any = true;
    }
  }
  if (!any) fail(ErrorKind::input, "no data");
  return LidarMap(std::move(grid));
}

}  // namespace fusionloc::map
