#pragma once

#include "fusionloc/core/types.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace fusionloc::lidar {

/// Square array over integer cell offsets u, v in [-W, W].
struct Window {
  int half = 0;
  std::vector<double> p;

  Window() = default;
  explicit Window(int w, double fill = 0.0) : half(w), p(static_cast<std::size_t>((2 * w + 1) * (2 * w + 1)), fill) {
    if (w < 0) fail(ErrorKind::input, "window half-width must be non-negative");
  }
  int side() const { return 2 * half + 1; }
  std::size_t size() const { return p.size(); }
  double& at(int u, int v) { return p[static_cast<std::size_t>((v + half) * side() + (u + half))]; }
  double at(int u, int v) const { return p[static_cast<std::size_t>((v + half) * side() + (u + half))]; }
  bool congruent(const Window& o) const { return half == o.half && p.size() == o.p.size(); }
  double sum() const { return std::accumulate(p.begin(), p.end(), 0.0); }

  static Window uniform(int w) {
    Window out(w);
    const double v = 1.0 / static_cast<double>(out.size());
    std::fill(out.p.begin(), out.p.end(), v);
    return out;
  }
};

/// Normalizes in place; returns false (leaving the window untouched) if the
/// total mass is not positive and finite.
inline bool normalize(Window& w) {
  const double s = w.sum();
  if (!(s > 0.0) || !std::isfinite(s)) return false;
  for (double& v : w.p) v /= s;
  return true;
}

/// Belief over horizontal positions center + resolution * (u, v).
struct HistogramPosterior {
  Vec2 center = Vec2::Zero();
  double resolution = 0.125;
  Window belief;
  bool degraded = false;

  static HistogramPosterior uniform(const Vec2& c, double res, int half) {
    return {c, res, Window::uniform(half), false};
  }
};

namespace detail {

inline std::vector<double> gaussian_taps(int half, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(2 * half + 1));
  for (int d = -half; d <= half; ++d) k[static_cast<std::size_t>(d + half)] = std::exp(-0.5 * d * d / (sigma * sigma));
  return k;
}

}  // namespace detail

/// Random-walk blur, evaluated separably. The sum runs over offsets
/// within 2W of each cell with the window edge replicated outward, so every
/// cell sees the same kernel support and a uniform belief stays uniform.
inline Window gaussian_blur(const Window& in, double sigma_cells) {
  if (!(sigma_cells > 0.0)) fail(ErrorKind::input, "sigma must be positive");
  const int W = in.half, K = 2 * W;
  const std::vector<double> k = detail::gaussian_taps(K, sigma_cells);
  auto clampi = [W](int a) { return std::clamp(a, -W, W); };
  Window tmp(W), out(W);
  for (int v = -W; v <= W; ++v)
    for (int x = -W; x <= W; ++x) {
      double s = 0.0;
      for (int d = -K; d <= K; ++d) s += in.at(clampi(x + d), v) * k[static_cast<std::size_t>(d + K)];
      tmp.at(x, v) = s;
    }
  for (int y = -W; y <= W; ++y)
    for (int x = -W; x <= W; ++x) {
      double s = 0.0;
      for (int d = -K; d <= K; ++d) s += tmp.at(x, clampi(y + d)) * k[static_cast<std::size_t>(d + K)];
      out.at(x, y) = s;
    }
  if (!normalize(out)) return Window::uniform(W);
  return out;
}

/// Moves the belief by the SINS displacement (meters) and applies the
/// Prediction blur. The center moves with the vehicle, so the belief array itself
/// only changes through the blur; a displacement larger than the window is
/// treated as a lost track.
inline HistogramPosterior predict(const HistogramPosterior& post, const Vec2& displacement, double sigma_m) {
  if (!(sigma_m > 0.0)) fail(ErrorKind::input, "sigma must be positive");
  if (!all_finite(displacement)) fail(ErrorKind::input, "non-finite displacement");
  HistogramPosterior out = post;
  out.center = post.center + displacement;
  const double reach = post.resolution * post.belief.half;
  if (std::abs(displacement.x()) > reach || std::abs(displacement.y()) > reach) {
    out.belief = Window::uniform(post.belief.half);
    out.degraded = true;
    return out;
  }
  out.belief = gaussian_blur(post.belief, sigma_m / post.resolution);
  out.degraded = false;
  return out;
}

/// Re-expresses the belief about a new window center. Sub-cell shifts are
/// bilinear; mass moved outside the window is lost and the rest renormalized.
/// A shift beyond the window yields a uniform belief flagged degraded.
inline HistogramPosterior recenter(const HistogramPosterior& post, const Vec2& new_center) {
  HistogramPosterior out = post;
  out.center = new_center;
  const int W = post.belief.half;
  const Vec2 s = (post.center - new_center) / post.resolution;  // old offset u maps to u + s
  if (std::abs(s.x()) > W || std::abs(s.y()) > W) {
    out.belief = Window::uniform(W);
    out.degraded = true;
    return out;
  }
  const int ix = static_cast<int>(std::floor(s.x())), iy = static_cast<int>(std::floor(s.y()));
  const double fx = s.x() - ix, fy = s.y() - iy;
  Window nb(W);
  for (int v = -W; v <= W; ++v)
    for (int u = -W; u <= W; ++u) {
      const double m = post.belief.at(u, v);
      if (m == 0.0) continue;
      const int tu = u + ix, tv = v + iy;
      const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      const int du[4] = {0, 1, 0, 1}, dv[4] = {0, 0, 1, 1};
      for (int q = 0; q < 4; ++q) {
        const int a = tu + du[q], b = tv + dv[q];
        if (a < -W || a > W || b < -W || b > W || wts[q] == 0.0) continue;
        nb.at(a, b) += m * wts[q];
      }
    }
  if (!normalize(nb)) {
    out.belief = Window::uniform(W);
    out.degraded = true;
    return out;
  }
  out.belief = std::move(nb);
  return out;
}

/// KL(likelihood || prediction) over the window, both normalized first.
inline double kl_divergence(const Window& likelihood, const Window& prediction) {
  if (!likelihood.congruent(prediction)) fail(ErrorKind::input, "window size mismatch");
  const double sl = likelihood.sum(), sp = prediction.sum();
  double kl = 0.0;
  for (std::size_t k = 0; k < likelihood.size(); ++k) {
    const double l = likelihood.p[k] / sl;
    if (l <= 0.0) continue;
    const double p = std::max(prediction.p[k] / sp, 1e-300);
    kl += l * std::log(l / p);
  }
  return kl;
}

struct PosteriorConfig {
  double kappa_min = 1.0;
  double kappa_max = 100.0;
};

/// Posterior proportional to likelihood * prediction^(1/kappa).
inline HistogramPosterior posterior_update(const HistogramPosterior& predicted, const Window& likelihood,
                                           const PosteriorConfig& cfg = {}, double* kappa_out = nullptr) {
  if (!predicted.belief.congruent(likelihood)) fail(ErrorKind::input, "window size mismatch");
  const double kappa = std::clamp(kl_divergence(likelihood, predicted.belief), cfg.kappa_min, cfg.kappa_max);
  if (kappa_out) *kappa_out = kappa;
  HistogramPosterior out = predicted;
  for (std::size_t k = 0; k < likelihood.size(); ++k)
    out.belief.p[k] = likelihood.p[k] * std::pow(predicted.belief.p[k], 1.0 / kappa);
  if (!normalize(out.belief)) {
    out.belief = Window::uniform(predicted.belief.half);
    out.degraded = true;
  }
  return out;
}

struct EstimateConfig {
  double beta = 2.0;
  double peak_ratio = 0.95;
  int area = 5;  // Z, odd
};

struct HistogramEstimate {
  Vec2 offset_cells = Vec2::Zero();
  Vec2 position = Vec2::Zero();   // center + resolution * offset
  Mat2 covariance = Mat2::Identity();  // m^2
  int peak_u = 0, peak_v = 0;     // center of the Z area
  bool second_peak_used = false;
  bool degraded = false;
};

struct Peak {
  int u = 0, v = 0;
  double value = 0.0;
};

/// Local maxima over the 8-neighborhood, sorted by value (ties by distance
/// to the window center, then v, then u). Plateaus report their first cell.
inline std::vector<Peak> find_peaks(const Window& w) {
  const int W = w.half;
  std::vector<Peak> peaks;
  for (int v = -W; v <= W; ++v)
    for (int u = -W; u <= W; ++u) {
      const double c = w.at(u, v);
      if (c <= 0.0) continue;
      bool is_max = true;
      for (int dv = -1; dv <= 1 && is_max; ++dv)
        for (int du = -1; du <= 1; ++du) {
          if (du == 0 && dv == 0) continue;
          const int a = u + du, b = v + dv;
          if (a < -W || a > W || b < -W || b > W) continue;
          const double n = w.at(a, b);
          // Strictly greater neighbors always win; equal neighbors win if they come first.
          if (n > c || (n == c && (b < v || (b == v && a < u)))) {
            is_max = false;
            break;
          }
        }
      if (is_max) peaks.push_back({u, v, c});
    }
  std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    if (a.value != b.value) return a.value > b.value;
    const int da = a.u * a.u + a.v * a.v, db = b.u * b.u + b.v * b.v;
    if (da != db) return da < db;
    return a.v != b.v ? a.v < b.v : a.u < b.u;
  });
  return peaks;
}

inline bool is_flat(const Window& w) {
  const auto [lo, hi] = std::minmax_element(w.p.begin(), w.p.end());
  return *hi - *lo <= 1e-15 * std::max(1.0, std::abs(*hi));
}

/// Offset over a Z x Z area around the selected peak and covariance
/// over the whole window, both with weights P^beta. The
/// covariance eigenvalues are floored at resolution^2 / 12.
inline HistogramEstimate extract_estimate(const HistogramPosterior& post, const EstimateConfig& cfg = {}) {
  const Window& w = post.belief;
  const int W = w.half;
  const double res = post.resolution;
  HistogramEstimate est;
  if (is_flat(w)) {
    est.position = post.center;
    const double var = res * res * (static_cast<double>(w.side()) * w.side() - 1.0) / 12.0;
    est.covariance = Mat2::Identity() * var;
    est.degraded = true;
    return est;
  }
  const std::vector<Peak> peaks = find_peaks(w);
  Peak chosen = peaks.front();
  if (peaks.size() > 1) {
    const Peak& second = peaks[1];
    const int d1 = chosen.u * chosen.u + chosen.v * chosen.v;
    const int d2 = second.u * second.u + second.v * second.v;
    if (second.value >= cfg.peak_ratio * chosen.value && d2 < d1) {
      chosen = second;
      est.second_peak_used = true;
    }
  }
  est.peak_u = chosen.u;
  est.peak_v = chosen.v;

  const int hz = cfg.area / 2;
  double sw = 0.0, sx = 0.0, sy = 0.0;
  for (int v = std::max(-W, chosen.v - hz); v <= std::min(W, chosen.v + hz); ++v)
    for (int u = std::max(-W, chosen.u - hz); u <= std::min(W, chosen.u + hz); ++u) {
      const double pb = std::pow(w.at(u, v), cfg.beta);
      sw += pb;
      sx += pb * u;
      sy += pb * v;
    }
  est.offset_cells = Vec2(sx / sw, sy / sw);
  est.position = post.center + res * est.offset_cells;

  double tw = 0.0;
  Mat2 C = Mat2::Zero();
  for (int v = -W; v <= W; ++v)
    for (int u = -W; u <= W; ++u) {
      const double pb = std::pow(w.at(u, v), cfg.beta);
      const Vec2 d = Vec2(u, v) - est.offset_cells;
      C += pb * d * d.transpose();
      tw += pb;
    }
  C *= res * res / tw;
  const double floor = res * res / 12.0;
  Eigen::SelfAdjointEigenSolver<Mat2> es(C);
  if (es.eigenvalues().minCoeff() < floor) {
    const Vec2 ev = es.eigenvalues().cwiseMax(floor);
    C = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  }
  est.covariance = 0.5 * (C + C.transpose());
  est.degraded = post.degraded;
  return est;
}

}  // namespace fusionloc::lidar
