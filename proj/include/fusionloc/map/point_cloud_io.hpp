#pragma once

#include "fusionloc/core/bytes.hpp"
#include "fusionloc/map/point_cloud.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fusionloc::map {

// Packed binary point-cloud stream: "PCLD", u16 version, u64 point count,
// then per point f64 t, f32 x, y, z, intensity. Consecutive points with the
// same t form one scan.
inline constexpr char kCloudMagic[4] = {'P', 'C', 'L', 'D'};

inline std::vector<unsigned char> encode_scans(const std::vector<Scan>& scans) {
  std::uint64_t total = 0;
  for (const Scan& s : scans) total += s.points.size();
  ByteWriter w;
  w.put_bytes(kCloudMagic, 4);
  w.put<std::uint16_t>(1);
  w.put<std::uint64_t>(total);
  for (const Scan& s : scans) {
    for (const ScanPoint& p : s.points) {
      w.put<double>(s.t);
      w.put<float>(p.x);
      w.put<float>(p.y);
      w.put<float>(p.z);
      w.put<float>(p.intensity);
    }
  }
  return std::move(w.bytes());
}

inline std::vector<Scan> group_points(const std::vector<std::pair<double, ScanPoint>>& pts) {
  std::vector<Scan> scans;
  for (const auto& [t, p] : pts) {
    if (scans.empty() || scans.back().t != t) scans.push_back(Scan{t, {}});
    scans.back().points.push_back(p);
  }
  return scans;
}

inline std::vector<Scan> decode_scans(const std::vector<unsigned char>& bytes) {
  ByteReader r(bytes);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kCloudMagic, 4) != 0) fail(ErrorKind::input, "bad point cloud magic");
  if (r.get<std::uint16_t>() != 1) fail(ErrorKind::input, "unsupported point cloud version");
  const auto n = r.get<std::uint64_t>();
  if (r.remaining() != n * 24) fail(ErrorKind::input, "point cloud size mismatch");
  std::vector<std::pair<double, ScanPoint>> pts;
  pts.reserve(n);
  for (std::uint64_t k = 0; k < n; ++k) {
    const double t = r.get<double>();
    ScanPoint p;
    p.x = r.get<float>();
    p.y = r.get<float>();
    p.z = r.get<float>();
    p.intensity = r.get<float>();
    pts.emplace_back(t, p);
  }
  return group_points(pts);
}

inline void save_scans(const std::vector<Scan>& scans, const std::string& path) {
  write_file_bytes(path, encode_scans(scans));
}

/// Reads either format; CSV is detected by the absence of the binary magic.
/// CSV columns: t,x,y,z,intensity (one header line allowed).
inline std::vector<Scan> load_scans(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kCloudMagic, 4) == 0) return decode_scans(bytes);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::vector<std::pair<double, ScanPoint>> pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    double t, x, y, z, i;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf", &t, &x, &y, &z, &i) != 5) {
      if (lineno == 1) continue;  // header
      fail(ErrorKind::input, path + ":" + std::to_string(lineno) + ": malformed point");
    }
    pts.emplace_back(t, ScanPoint{static_cast<float>(x), static_cast<float>(y), static_cast<float>(z),
                                  static_cast<float>(i)});
  }
  return group_points(pts);
}

}  // namespace fusionloc::map
