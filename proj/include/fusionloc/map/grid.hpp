#pragma once

#include "fusionloc/core/types.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <utility>
#include <vector>

namespace fusionloc::map {

/// Per-cell single-Gaussian statistics of laser intensity and altitude.
/// A cell with sample_count == 0 is empty and never takes part in matching.
struct GridCellStats {
  float intensity_mean = 0.0F;
  float intensity_var = 0.0F;
  float altitude_mean = 0.0F;
  float altitude_var = 0.0F;
  std::uint32_t sample_count = 0;

  bool empty() const { return sample_count == 0; }
  friend bool operator==(const GridCellStats&, const GridCellStats&) = default;
};

/// Global integer cell index; cell (i, j) spans
/// [i*res, (i+1)*res) x [j*res, (j+1)*res) in projected meters.
struct CellIndex {
  std::int64_t i = 0;
  std::int64_t j = 0;
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
  friend auto operator<=>(const CellIndex& a, const CellIndex& b) {
    if (auto c = a.j <=> b.j; c != 0) return c;
    return a.i <=> b.i;
  }
};

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

struct TileIndex {
  std::int32_t x = 0;
  std::int32_t y = 0;
  friend bool operator==(const TileIndex&, const TileIndex&) = default;
  friend auto operator<=>(const TileIndex&, const TileIndex&) = default;
};

/// Dense square block of cells. Cells are stored row-major, row = local j.
template <typename Cell>
struct Tile {
  TileIndex index;
  double resolution = 0.0;
  std::uint32_t dimension = 0;
  std::vector<Cell> cells;

  Vec2 origin() const {
    const double side = resolution * static_cast<double>(dimension);
    return {side * index.x, side * index.y};
  }
  Cell& at(std::uint32_t i, std::uint32_t j) { return cells[static_cast<std::size_t>(j) * dimension + i]; }
  const Cell& at(std::uint32_t i, std::uint32_t j) const { return cells[static_cast<std::size_t>(j) * dimension + i]; }
  Vec2 cell_center(std::uint32_t i, std::uint32_t j) const {
    return origin() + resolution * Vec2(i + 0.5, j + 0.5);
  }
  friend bool operator==(const Tile&, const Tile&) = default;
};

inline bool is_power_of_two(std::uint32_t v) { return v != 0 && (v & (v - 1)) == 0; }

/// Sparse set of equally sized tiles sharing one resolution. Tiles live in
/// an ordered container so iteration (and serialization) order is fixed.
template <typename Cell>
class TiledGrid {
 public:
  using TileType = Tile<Cell>;

  TiledGrid() = default;
  TiledGrid(double resolution, std::uint32_t dimension) : resolution_(resolution), dimension_(dimension) {
    if (!(resolution > 0.0) || !std::isfinite(resolution)) fail(ErrorKind::input, "resolution must be positive");
    if (!is_power_of_two(dimension)) fail(ErrorKind::input, "tile dimension must be a power of two");
  }

  double resolution() const { return resolution_; }
  std::uint32_t dimension() const { return dimension_; }
  const std::map<TileIndex, TileType>& tiles() const { return tiles_; }
  std::size_t tile_count() const { return tiles_.size(); }
  bool empty() const { return tiles_.empty(); }

  CellIndex cell_of(double x, double y) const {
    return {static_cast<std::int64_t>(std::floor(x / resolution_)),
            static_cast<std::int64_t>(std::floor(y / resolution_))};
  }
  CellIndex cell_of(const Vec2& p) const { return cell_of(p.x(), p.y()); }
  Vec2 center_of(const CellIndex& c) const {
    return {(static_cast<double>(c.i) + 0.5) * resolution_, (static_cast<double>(c.j) + 0.5) * resolution_};
  }

  TileIndex tile_of(const CellIndex& c) const {
    return {static_cast<std::int32_t>(floor_div(c.i, dimension_)), static_cast<std::int32_t>(floor_div(c.j, dimension_))};
  }

  const Cell* find(const CellIndex& c) const {
    auto it = tiles_.find(tile_of(c));
    if (it == tiles_.end()) return nullptr;
    return &local(it->second, c);
  }

  Cell& at(const CellIndex& c) {
    const TileIndex t = tile_of(c);
    auto it = tiles_.find(t);
    if (it == tiles_.end()) {
      TileType tile;
      tile.index = t;
      tile.resolution = resolution_;
      tile.dimension = dimension_;
      tile.cells.assign(static_cast<std::size_t>(dimension_) * dimension_, Cell{});
      it = tiles_.emplace(t, std::move(tile)).first;
    }
    return const_cast<Cell&>(local(it->second, c));
  }

  void insert_tile(TileType tile) {
    if (tile.resolution != resolution_ || tile.dimension != dimension_)
      fail(ErrorKind::input, "tile resolution/dimension mismatch");
    tiles_[tile.index] = std::move(tile);
  }

  bool has_tile(const TileIndex& t) const { return tiles_.count(t) != 0; }

  friend bool operator==(const TiledGrid& a, const TiledGrid& b) {
    return a.resolution_ == b.resolution_ && a.dimension_ == b.dimension_ && a.tiles_ == b.tiles_;
  }

 private:
  const Cell& local(const TileType& tile, const CellIndex& c) const {
    const auto li = static_cast<std::uint32_t>(c.i - static_cast<std::int64_t>(tile.index.x) * dimension_);
    const auto lj = static_cast<std::uint32_t>(c.j - static_cast<std::int64_t>(tile.index.y) * dimension_);
    return tile.at(li, lj);
  }

  double resolution_ = 0.125;
  std::uint32_t dimension_ = 1024;
  std::map<TileIndex, TileType> tiles_;
};

}  // namespace fusionloc::map
