#pragma once

#include "fusionloc/lidar_loc/histogram.hpp"
#include "fusionloc/map/online_grid.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace fusionloc::lidar {

struct LikelihoodConfig {
  double alpha = 2.718281828459045;
  double lambda = 2.0;
  double beta = 2.0;
  std::size_t n_min = 200;
  double floor = 1e-12;
  std::optional<double> fixed_gamma;  // adaptive when empty
};

/// Per-offset matching scores and likelihoods over the search window.
struct LikelihoodResult {
  Window ssd_r, ssd_a;       // raw sums
  Window p_r, p_a;           // normalized cue likelihoods
  Window combined;           // normalized p_r^gamma * p_a^(1-gamma)
  std::vector<int> overlap;  // co-occupied cells per offset, window order
  Vec2 var_r = Vec2::Zero();  // per-axis variances, cells^2
  Vec2 var_a = Vec2::Zero();
  double gamma = 0.5;
  std::size_t n_z = 0;
};

/// Per-axis variances of a normalized array with exponent beta (cells^2).
/// Each axis is floored at 1/12, the variance of a single-cell distribution.
inline Vec2 window_variance(const Window& p, double beta) {
  const int W = p.half;
  double sw = 0.0, sx = 0.0, sy = 0.0;
  for (int v = -W; v <= W; ++v)
    for (int u = -W; u <= W; ++u) {
      const double w = std::pow(p.at(u, v), beta);
      sw += w;
      sx += w * u;
      sy += w * v;
    }
  const double mx = sx / sw, my = sy / sw;
  double vx = 0.0, vy = 0.0;
  for (int v = -W; v <= W; ++v)
    for (int u = -W; u <= W; ++u) {
      const double w = std::pow(p.at(u, v), beta);
      vx += w * (u - mx) * (u - mx);
      vy += w * (v - my) * (v - my);
    }
  return Vec2(std::max(vx / sw, 1.0 / 12.0), std::max(vy / sw, 1.0 / 12.0));
}

/// Intensity weight from the two cues' spreads.
inline double adaptive_gamma(const Vec2& var_r, const Vec2& var_a) {
  const double a = var_a.x() * var_a.y(), r = var_r.x() * var_r.y();
  return a / (a + r);
}

namespace detail {

// Dense copy of the map around the online footprint; invalid cells flagged.
struct MapPatch {
  std::int64_t i0 = 0, j0 = 0;
  int w = 0, h = 0;
  std::vector<double> r, inv_var, a;
  std::vector<unsigned char> valid;
};

inline MapPatch fetch_patch(const map::LidarMap& m, std::int64_t i0, std::int64_t j0, int w, int h) {
  MapPatch p;
  p.i0 = i0;
  p.j0 = j0;
  p.w = w;
  p.h = h;
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  p.r.assign(n, 0.0);
  p.inv_var.assign(n, 0.0);
  p.a.assign(n, 0.0);
  p.valid.assign(n, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto s = m.query(map::CellIndex{i0 + x, j0 + y});
      if (!s || s->empty()) continue;
      const std::size_t k = static_cast<std::size_t>(y) * w + x;
      p.r[k] = s->intensity_mean;
      p.inv_var[k] = 1.0 / static_cast<double>(s->intensity_var);
      p.a[k] = s->altitude_mean;
      p.valid[k] = 1;
    }
  return p;
}

// Log of a normalized cue likelihood from raw SSD values.
inline Window log_likelihood(const Window& ssd, const std::vector<int>& overlap, double scale, double floor) {
  Window lp(ssd.half);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < ssd.size(); ++k)
    if (overlap[k] > 0) {
      lp.p[k] = -scale * ssd.p[k];
      mx = std::max(mx, lp.p[k]);
    }
  double s = 0.0;
  for (std::size_t k = 0; k < ssd.size(); ++k)
    if (overlap[k] > 0) s += std::exp(lp.p[k] - mx);
  const double lse = mx + std::log(s);
  const double lf = std::log(floor);
  // Floored offsets are added after normalizing the valid ones, then the
  // whole array is renormalized.
  double extra = 0.0;
  for (std::size_t k = 0; k < ssd.size(); ++k)
    if (overlap[k] > 0) lp.p[k] -= lse;
    else {
      lp.p[k] = lf;
      extra += floor;
    }
  const double lz = std::log1p(extra);
  for (double& v : lp.p) v -= lz;
  return lp;
}

inline Window exp_normalized(const Window& lp) {
  Window out(lp.half);
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : lp.p) mx = std::max(mx, v);
  for (std::size_t k = 0; k < lp.size(); ++k) out.p[k] = std::exp(lp.p[k] - mx);
  normalize(out);
  return out;
}

}  // namespace detail

/// Sweeps integer cell offsets (u, v) in [-W, W]^2. Offset (u, v) means the
/// vehicle is (u, v) cells away from where the online grid was rasterized,
/// so online cell c is compared with map cell c + (u, v).
inline LikelihoodResult measurement_likelihood(const map::OnlineGrid& online, const map::LidarMap& m, int half,
                                               const LikelihoodConfig& cfg = {}) {
  if (online.cells.size() <= cfg.n_min) fail(ErrorKind::input, "insufficient overlap");
  if (!(cfg.alpha > 1.0)) fail(ErrorKind::input, "alpha must exceed 1");
  if (std::abs(online.resolution - m.grid().resolution()) > 1e-12)
    fail(ErrorKind::input, "online grid resolution differs from map");

  std::int64_t imin = std::numeric_limits<std::int64_t>::max(), jmin = imin;
  std::int64_t imax = std::numeric_limits<std::int64_t>::min(), jmax = imax;
  for (const auto& c : online.cells) {
    imin = std::min(imin, c.index.i);
    imax = std::max(imax, c.index.i);
    jmin = std::min(jmin, c.index.j);
    jmax = std::max(jmax, c.index.j);
  }
  const std::int64_t pi0 = imin - half, pj0 = jmin - half;
  const int pw = static_cast<int>(imax - imin) + 2 * half + 1;
  const int ph = static_cast<int>(jmax - jmin) + 2 * half + 1;
  const detail::MapPatch patch = detail::fetch_patch(m, pi0, pj0, pw, ph);

  struct Z {
    std::size_t base;
    double r, inv_var, a;
  };
  std::vector<Z> zs;
  zs.reserve(online.cells.size());
  for (const auto& c : online.cells)
    zs.push_back({static_cast<std::size_t>(c.index.j - pj0) * pw + static_cast<std::size_t>(c.index.i - pi0),
                  c.stats.intensity_mean, 1.0 / static_cast<double>(c.stats.intensity_var), c.stats.altitude_mean});

  LikelihoodResult out;
  out.n_z = online.cells.size();
  out.ssd_r = Window(half);
  out.ssd_a = Window(half);
  out.overlap.assign(out.ssd_r.size(), 0);
  for (int v = -half; v <= half; ++v)
    for (int u = -half; u <= half; ++u) {
      const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(v) * pw + u;
      double sr = 0.0, sa = 0.0;
      int n = 0;
      for (const Z& z : zs) {
        const std::size_t k = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(z.base) + shift);
        if (!patch.valid[k]) continue;
        const double dr = patch.r[k] - z.r, da = patch.a[k] - z.a;
        sr += dr * dr * (patch.inv_var[k] + z.inv_var);
        sa += da * da;
        ++n;
      }
      out.ssd_r.at(u, v) = sr;
      out.ssd_a.at(u, v) = sa;
      out.overlap[static_cast<std::size_t>((v + half) * (2 * half + 1) + (u + half))] = n;
    }

  const double ln_alpha = std::log(cfg.alpha);
  const double nz2 = 2.0 * static_cast<double>(out.n_z);
  const Window lr = detail::log_likelihood(out.ssd_r, out.overlap, ln_alpha / nz2, cfg.floor);
  const Window la = detail::log_likelihood(out.ssd_a, out.overlap, ln_alpha * cfg.lambda / nz2, cfg.floor);
  out.p_r = detail::exp_normalized(lr);
  out.p_a = detail::exp_normalized(la);
  out.var_r = window_variance(out.p_r, cfg.beta);
  out.var_a = window_variance(out.p_a, cfg.beta);
  out.gamma = cfg.fixed_gamma ? *cfg.fixed_gamma : adaptive_gamma(out.var_r, out.var_a);
  Window lc(half);
  for (std::size_t k = 0; k < lc.size(); ++k) lc.p[k] = out.gamma * lr.p[k] + (1.0 - out.gamma) * la.p[k];
  out.combined = detail::exp_normalized(lc);
  return out;
}

}  // namespace fusionloc::lidar
