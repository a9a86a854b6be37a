#pragma once

#include "fusionloc/core/bytes.hpp"
#include "fusionloc/map/lidar_map.hpp"

#include <zlib.h>

#include <algorithm>
#include <filesystem>
#include <regex>
#include <string>

namespace fusionloc::map {

inline constexpr char kTileMagic[4] = {'L', 'M', 'A', 'P'};
inline constexpr std::uint16_t kTileVersion = 1;

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

inline std::vector<unsigned char> encode_tile(const Tile<GridCellStats>& tile) {
  ByteWriter w;
  w.put_bytes(kTileMagic, 4);
  w.put<std::uint16_t>(kTileVersion);
  w.put<double>(tile.resolution);
  w.put<std::uint32_t>(tile.dimension);
  w.put<std::int32_t>(tile.index.x);
  w.put<std::int32_t>(tile.index.y);
  const Vec2 origin = tile.origin();
  w.put<double>(origin.x());
  w.put<double>(origin.y());
  for (const GridCellStats& c : tile.cells) {
    w.put<std::uint32_t>(c.sample_count);
    w.put<float>(c.intensity_mean);
    w.put<float>(c.intensity_var);
    w.put<float>(c.altitude_mean);
    w.put<float>(c.altitude_var);
  }
  const std::uint32_t crc = crc32_of(w.bytes().data(), w.bytes().size());
  w.put<std::uint32_t>(crc);
  return std::move(w.bytes());
}

inline Tile<GridCellStats> decode_tile(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 4 + 2 + 8 + 4 + 8 + 16 + 4) fail(ErrorKind::input, "tile file too short");
  const std::size_t body = bytes.size() - 4;
  ByteReader crc_reader(bytes.data() + body, 4);
  if (crc_reader.get<std::uint32_t>() != crc32_of(bytes.data(), body)) fail(ErrorKind::input, "tile CRC mismatch");

  ByteReader r(bytes.data(), body);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kTileMagic, 4) != 0) fail(ErrorKind::input, "bad tile magic");
  if (r.get<std::uint16_t>() != kTileVersion) fail(ErrorKind::input, "unsupported tile version");
  Tile<GridCellStats> tile;
  tile.resolution = r.get<double>();
  tile.dimension = r.get<std::uint32_t>();
  tile.index.x = r.get<std::int32_t>();
  tile.index.y = r.get<std::int32_t>();
  const double ox = r.get<double>();
  const double oy = r.get<double>();
  if (!(tile.resolution > 0.0) || !is_power_of_two(tile.dimension)) fail(ErrorKind::input, "bad tile header");
  const Vec2 expect = tile.origin();
  if (ox != expect.x() || oy != expect.y()) fail(ErrorKind::input, "tile origin inconsistent with index");
  const std::size_t n = static_cast<std::size_t>(tile.dimension) * tile.dimension;
  if (r.remaining() != n * 20) fail(ErrorKind::input, "tile payload size mismatch");
  tile.cells.resize(n);
  for (GridCellStats& c : tile.cells) {
    c.sample_count = r.get<std::uint32_t>();
    c.intensity_mean = r.get<float>();
    c.intensity_var = r.get<float>();
    c.altitude_mean = r.get<float>();
    c.altitude_var = r.get<float>();
  }
  return tile;
}

inline std::string tile_file_name(const TileIndex& t) {
  return "tile_" + std::to_string(t.x) + "_" + std::to_string(t.y) + ".lmap";
}

/// Writes one file per tile into `dir` (created if missing).
inline void save_map(const LidarMap& map, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [index, tile] : map.grid().tiles())
    write_file_bytes((dir / tile_file_name(index)).string(), encode_tile(tile));
}

inline LidarMap load_map(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorKind::input, "map directory not found: " + dir.string());
  static const std::regex pattern(R"(tile_(-?\d+)_(-?\d+)\.lmap)");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && std::regex_match(entry.path().filename().string(), pattern))
      files.push_back(entry.path());
  }
  if (files.empty()) fail(ErrorKind::input, "missing map tiles in " + dir.string());
  std::sort(files.begin(), files.end());
  TiledGrid<GridCellStats> grid;
  bool first = true;
  for (const auto& f : files) {
    Tile<GridCellStats> tile = decode_tile(read_file_bytes(f.string()));
    if (f.filename().string() != tile_file_name(tile.index)) fail(ErrorKind::input, "tile index does not match file name");
    if (first) {
      grid = TiledGrid<GridCellStats>(tile.resolution, tile.dimension);
      first = false;
    }
    grid.insert_tile(std::move(tile));
  }
  return LidarMap(std::move(grid));
}

}  // namespace fusionloc::map
