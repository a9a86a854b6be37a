#pragma once

#include "fusionloc/map/online_grid.hpp"

#include <cmath>
#include <map>
#include <vector>

namespace fusionloc::lidar {

/// Dense single-channel image in map coordinates. Pixel (x, y) is centered
/// at origin + resolution * (x, y).
struct Raster {
  int width = 0;
  int height = 0;
  double resolution = 0.125;
  Vec2 origin = Vec2::Zero();
  std::vector<double> value;
  std::vector<unsigned char> valid;

  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
  bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  bool ok(int x, int y) const { return inside(x, y) && valid[index(x, y)]; }
  double at(int x, int y) const { return value[index(x, y)]; }
};

/// Intensity means of the map cells within `half_m` of `center`.
inline Raster map_intensity_raster(const map::LidarMap& m, const Vec2& center, double half_m) {
  const double res = m.grid().resolution();
  const map::CellIndex lo = m.grid().cell_of(center.x() - half_m, center.y() - half_m);
  const map::CellIndex hi = m.grid().cell_of(center.x() + half_m, center.y() + half_m);
  Raster r;
  r.resolution = res;
  r.width = static_cast<int>(hi.i - lo.i) + 1;
  r.height = static_cast<int>(hi.j - lo.j) + 1;
  r.origin = m.grid().center_of(lo);
  r.value.assign(static_cast<std::size_t>(r.width) * r.height, 0.0);
  r.valid.assign(r.value.size(), 0);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      if (const auto s = m.query(map::CellIndex{lo.i + x, lo.j + y})) {
        r.value[r.index(x, y)] = s->intensity_mean;
        r.valid[r.index(x, y)] = 1;
      }
  return r;
}

struct TemplatePoint {
  Vec2 p = Vec2::Zero();  // map coordinates
  double value = 0.0;
};

inline std::vector<TemplatePoint> online_template(const map::OnlineGrid& g) {
  std::vector<TemplatePoint> out;
  out.reserve(g.cells.size());
  for (const auto& c : g.cells)
    out.push_back({Vec2((static_cast<double>(c.index.i) + 0.5) * g.resolution,
                        (static_cast<double>(c.index.j) + 0.5) * g.resolution),
                   c.stats.intensity_mean});
  return out;
}

struct HeadingConfig {
  int levels = 3;
  int max_iterations = 30;
  double tolerance = 1e-4;  // rad
  double min_overlap = 0.25;
  double max_rotation = 0.35;  // rad; beyond this the solution is treated as diverged
};

struct HeadingResult {
  double heading = 0.0;
  double rotation = 0.0;  // counter-clockwise image rotation found by the alignment
  Vec2 translation = Vec2::Zero();
  double overlap = 0.0;
  int iterations = 0;
  bool converged = false;
  bool degraded = false;
};

namespace detail {

inline Raster downsample(const Raster& r) {
  Raster o;
  o.resolution = r.resolution * 2.0;
  o.width = (r.width + 1) / 2;
  o.height = (r.height + 1) / 2;
  o.origin = r.origin + Vec2::Constant(0.5 * r.resolution);
  o.value.assign(static_cast<std::size_t>(o.width) * o.height, 0.0);
  o.valid.assign(o.value.size(), 0);
  for (int y = 0; y < o.height; ++y)
    for (int x = 0; x < o.width; ++x) {
      double s = 0.0;
      int n = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          if (r.ok(2 * x + dx, 2 * y + dy)) {
            s += r.at(2 * x + dx, 2 * y + dy);
            ++n;
          }
      if (n > 0) {
        o.value[o.index(x, y)] = s / n;
        o.valid[o.index(x, y)] = 1;
      }
    }
  return o;
}

// Block-averages template points onto the pixel lattice of `r`.
inline std::vector<TemplatePoint> bin_template(const std::vector<TemplatePoint>& pts, const Raster& r) {
  std::map<std::pair<long, long>, std::pair<double, int>> acc;
  for (const auto& t : pts) {
    const Vec2 q = (t.p - r.origin) / r.resolution;
    auto& a = acc[{std::lround(q.y()), std::lround(q.x())}];
    a.first += t.value;
    a.second += 1;
  }
  std::vector<TemplatePoint> out;
  out.reserve(acc.size());
  for (const auto& [k, a] : acc)
    out.push_back({r.origin + r.resolution * Vec2(static_cast<double>(k.second), static_cast<double>(k.first)),
                   a.first / a.second});
  return out;
}

// Bilinear sample with central-difference gradient; false if any needed
// pixel is missing.
inline bool sample(const Raster& r, const Vec2& world, double& v, Vec2& grad) {
  const Vec2 q = (world - r.origin) / r.resolution;
  const int x0 = static_cast<int>(std::floor(q.x())), y0 = static_cast<int>(std::floor(q.y()));
  const double fx = q.x() - x0, fy = q.y() - y0;
  for (int y = y0 - 1; y <= y0 + 2; ++y)
    for (int x = x0 - 1; x <= x0 + 2; ++x) {
      const bool corner = (x == x0 - 1 || x == x0 + 2) && (y == y0 - 1 || y == y0 + 2);
      if (!corner && !r.ok(x, y)) return false;
    }
  auto gx = [&](int x, int y) { return 0.5 * (r.at(x + 1, y) - r.at(x - 1, y)) / r.resolution; };
  auto gy = [&](int x, int y) { return 0.5 * (r.at(x, y + 1) - r.at(x, y - 1)) / r.resolution; };
  auto bil = [&](auto f) {
    return (1 - fx) * (1 - fy) * f(x0, y0) + fx * (1 - fy) * f(x0 + 1, y0) + (1 - fx) * fy * f(x0, y0 + 1) +
           fx * fy * f(x0 + 1, y0 + 1);
  };
  v = bil([&](int x, int y) { return r.at(x, y); });
  grad = Vec2(bil(gx), bil(gy));
  return true;
}

inline Mat2 rot2(double a) {
  Mat2 m;
  m << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  return m;
}

}  // namespace detail

/// Forward-additive Lucas-Kanade alignment of the sparse online intensity
/// template onto the map image over (rotation about `pivot`, translation),
/// coarse to fine. Only the rotation is used: heading = h0 - rotation, since
/// heading is measured clockwise.
inline HeadingResult estimate_heading(const std::vector<TemplatePoint>& online, const Raster& map_image,
                                      const Vec2& pivot, double h0, const HeadingConfig& cfg = {}) {
  HeadingResult res;
  res.heading = h0;
  if (online.empty()) fail(ErrorKind::input, "insufficient overlap");
  {
    int hit = 0;
    double v;
    Vec2 g;
    for (const auto& t : online) hit += detail::sample(map_image, t.p, v, g) ? 1 : 0;
    res.overlap = static_cast<double>(hit) / static_cast<double>(online.size());
    if (res.overlap < cfg.min_overlap) fail(ErrorKind::input, "insufficient overlap");
  }

  std::vector<Raster> pyr{map_image};
  for (int l = 1; l < cfg.levels; ++l) pyr.push_back(detail::downsample(pyr.back()));

  double theta = 0.0;
  Vec2 t = Vec2::Zero();
  bool converged_fine = false;
  for (int l = cfg.levels - 1; l >= 0; --l) {
    const Raster& img = pyr[static_cast<std::size_t>(l)];
    const std::vector<TemplatePoint> tpl = l == 0 ? online : detail::bin_template(online, img);
    bool converged = false;
    for (int it = 0; it < cfg.max_iterations; ++it) {
      ++res.iterations;
      const Mat2 R = detail::rot2(theta);
      Mat2 dR;
      dR << -std::sin(theta), -std::cos(theta), std::cos(theta), -std::sin(theta);
      Mat3 H = Mat3::Zero();
      Vec3 b = Vec3::Zero();
      int used = 0;
      for (const auto& tp : tpl) {
        const Vec2 d = tp.p - pivot;
        const Vec2 w = pivot + R * d + t;
        double iv;
        Vec2 g;
        if (!detail::sample(img, w, iv, g)) continue;
        const Vec3 sd(g.dot(dR * d), g.x(), g.y());
        H += sd * sd.transpose();
        b += sd * (tp.value - iv);
        ++used;
      }
      if (used < 6) break;
      Eigen::LDLT<Mat3> ldlt(H);
      if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) break;
      const Vec3 dp = ldlt.solve(b);
      if (!all_finite(dp)) break;
      theta += dp(0);
      t += dp.tail<2>();
      if (std::abs(theta) > cfg.max_rotation) break;
      if (std::abs(dp(0)) < cfg.tolerance) {
        converged = true;
        break;
      }
    }
    if (l == 0) converged_fine = converged;
  }
  res.rotation = theta;
  res.translation = t;
  res.converged = converged_fine && std::abs(theta) <= cfg.max_rotation;
  if (!res.converged) {
    res.degraded = true;
    res.heading = h0;
    return res;
  }
  res.heading = wrap_angle(h0 - theta);
  return res;
}

}  // namespace fusionloc::lidar
