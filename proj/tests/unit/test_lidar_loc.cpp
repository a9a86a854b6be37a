#include "fusionloc/lidar_loc/localizer.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace fusionloc;
using namespace fusionloc::lidar;
using map::CellIndex;
using map::OnlineCell;
using map::OnlineGrid;

namespace {

struct Texture {
  struct Wave {
    double kx, ky, phase, amp;
  };
  std::vector<Wave> waves;
  double base = 120.0;

  static Texture random(std::mt19937_64& rng, int n = 24, double min_wl = 0.8, double max_wl = 6.0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Texture t;
    for (int i = 0; i < n; ++i) {
      const double wl = min_wl + (max_wl - min_wl) * u(rng);
      const double dir = 2.0 * kPi * u(rng);
      const double k = 2.0 * kPi / wl;
      t.waves.push_back({k * std::cos(dir), k * std::sin(dir), 2.0 * kPi * u(rng), 40.0 / std::sqrt(n)});
    }
    return t;
  }
  double operator()(double x, double y) const {
    double s = base;
    for (const auto& w : waves) s += w.amp * std::cos(w.kx * x + w.ky * y + w.phase);
    return s;
  }
};

struct Scene {
  Texture tex;
  std::function<double(double, double)> alt = [](double, double) { return 10.0; };
};

map::LidarMap build_map(const Scene& sc, double x0, double x1, double y0, double y1, double res = 0.125) {
  map::RasterParams rp;
  rp.resolution = res;
  map::MapAccumulator acc(rp, 256);
  for (double y = y0 + 0.5 * res; y < y1; y += res)
    for (double x = x0 + 0.5 * res; x < x1; x += res) acc.add_sample(x, y, sc.alt(x, y), sc.tex(x, y));
  return map::finalize_map(acc);
}

// Points on a jittered lattice around the true pose, expressed in the body
// frame of that pose.
std::vector<map::ScanPoint> make_scan(const Scene& sc, const map::Pose6& truth, double radius, std::mt19937_64& rng,
                                      double keep = 1.0, double sig_i = 0.0, double sig_a = 0.0) {
  std::uniform_real_distribution<double> u(-0.5, 0.5), uk(0.0, 1.0);
  std::normal_distribution<double> n01;
  const map::PoseTransform tf(truth);
  std::vector<map::ScanPoint> pts;
  const double step = 0.125;
  for (double dy = -radius; dy <= radius; dy += step)
    for (double dx = -radius; dx <= radius; dx += step) {
      if (dx * dx + dy * dy > radius * radius || uk(rng) > keep) continue;
      const double x = truth.x + dx + step * u(rng), y = truth.y + dy + step * u(rng);
      const Vec3 b = tf.inverse(Vec3(x, y, sc.alt(x, y) + sig_a * n01(rng)));
      pts.push_back({static_cast<float>(b.x()), static_cast<float>(b.y()), static_cast<float>(b.z()),
                     static_cast<float>(sc.tex(x, y) + sig_i * n01(rng))});
    }
  return pts;
}

Window random_window(std::mt19937_64& rng, int W) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Window w(W);
  for (double& v : w.p) v = u(rng);
  normalize(w);
  return w;
}

// Prediction blur written as the literal double sum with edge replication.
Window blur_oracle(const Window& in, double sigma) {
  const int W = in.half, K = 2 * W;
  Window out(W);
  for (int y = -W; y <= W; ++y)
    for (int x = -W; x <= W; ++x) {
      double s = 0.0;
      for (int j = y - K; j <= y + K; ++j)
        for (int i = x - K; i <= x + K; ++i)
          s += in.at(std::clamp(i, -W, W), std::clamp(j, -W, W)) *
               std::exp(-((i - x) * (i - x) + (j - y) * (j - y)) / (2.0 * sigma * sigma));
      out.at(x, y) = s;
    }
  normalize(out);
  return out;
}

double max_diff(const Window& a, const Window& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a.p[k] - b.p[k]));
  return m;
}

OnlineGrid grid_from(const std::vector<std::tuple<int, int, double, double, double>>& cells, double res) {
  OnlineGrid g;
  g.resolution = res;
  for (const auto& [i, j, r, var, a] : cells) {
    map::GridCellStats s;
    s.intensity_mean = static_cast<float>(r);
    s.intensity_var = static_cast<float>(var);
    s.altitude_mean = static_cast<float>(a);
    s.altitude_var = 0.0025F;
    s.sample_count = 1;
    g.cells.push_back({CellIndex{i, j}, s});
  }
  std::sort(g.cells.begin(), g.cells.end(), [](const OnlineCell& a, const OnlineCell& b) { return a.index < b.index; });
  return g;
}

}  // namespace

// ---------------------------------------------------------------- prediction

TEST(Predict, ImpulsePreservedForTinySigma) {
  Window w(5);
  w.at(0, 0) = 1.0;
  const Window b = gaussian_blur(w, 1e-6);
  EXPECT_EQ(b.at(0, 0), 1.0);
  EXPECT_EQ(b.sum(), 1.0);
}

TEST(Predict, UniformStaysUniform) {
  const Window u = Window::uniform(7);
  const Window b = gaussian_blur(u, 2.3);
  for (double v : b.p) EXPECT_NEAR(v, 1.0 / 225.0, 1e-15);
}

class WindowSizes : public ::testing::TestWithParam<int> {};

TEST_P(WindowSizes, BlurMatchesDirectSum) {
  const int W = GetParam();
  std::mt19937_64 rng(100 + W);
  Window imp(W);
  imp.at(0, 0) = 1.0;
  EXPECT_LT(max_diff(gaussian_blur(imp, 1.0), blur_oracle(imp, 1.0)), 1e-12);
  const Window r = random_window(rng, W);
  EXPECT_LT(max_diff(gaussian_blur(r, 1.7), blur_oracle(r, 1.7)), 1e-12);
}

// ---------------------------------------------------------------- posterior

TEST_P(WindowSizes, PosteriorMatchesDirectFormula) {
  const int W = GetParam();
  std::mt19937_64 rng(200 + W);
  const Window prior = random_window(rng, W), lik = random_window(rng, W);
  double kl = 0.0;
  for (std::size_t k = 0; k < prior.size(); ++k) kl += lik.p[k] * std::log(lik.p[k] / prior.p[k]);
  const double kappa = std::clamp(kl, 1.0, 100.0);
  Window direct(W);
  for (std::size_t k = 0; k < prior.size(); ++k) direct.p[k] = lik.p[k] * std::pow(prior.p[k], 1.0 / kappa);
  normalize(direct);
  HistogramPosterior pred{Vec2(0, 0), 0.125, prior, false};
  double kappa_out = 0.0;
  const HistogramPosterior post = posterior_update(pred, lik, {}, &kappa_out);
  EXPECT_NEAR(kappa_out, kappa, 1e-12);
  EXPECT_LT(max_diff(post.belief, direct), 1e-12);
  EXPECT_NEAR(post.belief.sum(), 1.0, 1e-12);
}

TEST(Posterior, UniformLikelihood) {
  std::mt19937_64 rng(3);
  Window prior(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : prior.p) v = std::pow(u(rng), 8.0) + 1e-6;
  normalize(prior);
  const Window lik = Window::uniform(6);
  double kl = 0.0;
  for (std::size_t k = 0; k < prior.size(); ++k) kl += lik.p[k] * std::log(lik.p[k] / prior.p[k]);
  const double kappa = std::clamp(kl, 1.0, 100.0);
  EXPECT_GT(kl, 1.0);
  Window direct(6);
  for (std::size_t k = 0; k < prior.size(); ++k) direct.p[k] = std::pow(prior.p[k], 1.0 / kappa);
  normalize(direct);
  const HistogramPosterior post = posterior_update({Vec2(0, 0), 0.125, prior, false}, lik);
  EXPECT_LT(max_diff(post.belief, direct), 1e-12);
}

TEST(Posterior, UniformPriorGivesLikelihood) {
  std::mt19937_64 rng(4);
  Window lik(8);
  lik.at(2, -1) = 0.7;
  lik.at(3, -1) = 0.2;
  lik.at(2, 0) = 0.1;
  const HistogramPosterior post = posterior_update(HistogramPosterior::uniform(Vec2(0, 0), 0.125, 8), lik);
  EXPECT_LT(max_diff(post.belief, lik), 1e-12);
}

TEST(Posterior, IdenticalInputsClampKappaToOne) {
  std::mt19937_64 rng(5);
  const Window w = random_window(rng, 4);
  double kappa = 0.0;
  const HistogramPosterior post = posterior_update({Vec2(0, 0), 0.125, w, false}, w, {}, &kappa);
  EXPECT_EQ(kappa, 1.0);
  Window sq(4);
  for (std::size_t k = 0; k < w.size(); ++k) sq.p[k] = w.p[k] * w.p[k];
  normalize(sq);
  EXPECT_LT(max_diff(post.belief, sq), 1e-12);
}

TEST(Posterior, RejectsMismatchedWindows) {
  EXPECT_THROW(posterior_update(HistogramPosterior::uniform(Vec2(0, 0), 0.125, 3), Window::uniform(4)), Error);
}

TEST(PredictStep, MovesCenterAndBlurs) {
  HistogramPosterior p = HistogramPosterior::uniform(Vec2(10, 20), 0.125, 10);
  p.belief = Window(10);
  p.belief.at(1, 1) = 1.0;
  const HistogramPosterior q = predict(p, Vec2(0.3, -0.2), 0.125);
  EXPECT_EQ(q.center, Vec2(10.3, 19.8));
  EXPECT_FALSE(q.degraded);
  EXPECT_NEAR(q.belief.sum(), 1.0, 1e-12);
  EXPECT_GT(q.belief.at(1, 1), q.belief.at(2, 1));
  const HistogramPosterior far = predict(p, Vec2(2.0, 0.0), 0.125);
  EXPECT_TRUE(far.degraded);
  EXPECT_NEAR(far.belief.at(-10, 10), 1.0 / 441.0, 1e-15);
  EXPECT_THROW(predict(p, Vec2(0, 0), 0.0), Error);
}

TEST(Recenter, IntegerAndFractionalShifts) {
  HistogramPosterior p{Vec2(0, 0), 0.5, Window(6), false};
  p.belief.at(2, -1) = 1.0;
  const HistogramPosterior a = recenter(p, Vec2(1.0, 0.0));  // two cells east
  EXPECT_NEAR(a.belief.at(0, -1), 1.0, 1e-15);
  const HistogramPosterior b = recenter(p, Vec2(-0.25, 0.0));  // half a cell west
  EXPECT_NEAR(b.belief.at(2, -1), 0.5, 1e-15);
  EXPECT_NEAR(b.belief.at(3, -1), 0.5, 1e-15);
  const HistogramPosterior c = recenter(p, Vec2(100.0, 0.0));
  EXPECT_TRUE(c.degraded);
}

// ---------------------------------------------------------------- estimate

TEST(Estimate, DeltaPosterior) {
  HistogramPosterior p{Vec2(100, 200), 0.125, Window(20), false};
  p.belief.at(3, -2) = 1.0;
  const HistogramEstimate e = extract_estimate(p);
  EXPECT_NEAR(e.position.x(), 100 + 0.375, 1e-12);
  EXPECT_NEAR(e.position.y(), 200 - 0.25, 1e-12);
  const double floor = 0.125 * 0.125 / 12.0;
  EXPECT_NEAR(e.covariance(0, 0), floor, 1e-15);
  EXPECT_NEAR(e.covariance(1, 1), floor, 1e-15);
  EXPECT_NEAR(e.covariance(0, 1), 0.0, 1e-15);
}

TEST(Estimate, SecondPeakNearerCenterChosen) {
  HistogramPosterior p{Vec2(0, 0), 0.125, Window(20), false};
  p.belief.at(8, 0) = 1.0;
  p.belief.at(-2, 0) = 0.99;
  normalize(p.belief);
  const HistogramEstimate e = extract_estimate(p);
  EXPECT_TRUE(e.second_peak_used);
  EXPECT_EQ(e.peak_u, -2);
  p.belief = Window(20);
  p.belief.at(8, 0) = 1.0;
  p.belief.at(-2, 0) = 0.90;  // below the ratio
  normalize(p.belief);
  EXPECT_EQ(extract_estimate(p).peak_u, 8);
  p.belief = Window(20);
  p.belief.at(2, 0) = 1.0;
  p.belief.at(-8, 0) = 0.99;  // farther from the center
  normalize(p.belief);
  EXPECT_EQ(extract_estimate(p).peak_u, 2);
}

TEST(Estimate, FlatPosteriorDegraded) {
  const HistogramPosterior p = HistogramPosterior::uniform(Vec2(5, 6), 0.125, 4);
  const HistogramEstimate e = extract_estimate(p);
  EXPECT_TRUE(e.degraded);
  EXPECT_EQ(e.position, Vec2(5, 6));
  EXPECT_GT(e.covariance(0, 0), 0.125 * 0.125 * 4);
}

TEST_P(WindowSizes, EstimateMatchesDirectSums) {
  const int W = GetParam();
  std::mt19937_64 rng(300 + W);
  HistogramPosterior p{Vec2(1.0, -2.0), 0.125, random_window(rng, W), false};
  const EstimateConfig cfg;
  const HistogramEstimate e = extract_estimate(p, cfg);
  // Oracle: chosen peak from the function, then literal offset and covariance sums.
  const int cu = e.peak_u, cv = e.peak_v;
  double sw = 0, sx = 0, sy = 0;
  for (int v = -W; v <= W; ++v)
    for (int u = -W; u <= W; ++u)
      if (std::abs(u - cu) <= 2 && std::abs(v - cv) <= 2) {
        const double w = p.belief.at(u, v) * p.belief.at(u, v);
        sw += w;
        sx += w * u;
        sy += w * v;
      }
  const double xh = sx / sw, yh = sy / sw;
  EXPECT_NEAR(e.position.x(), 1.0 + 0.125 * xh, 1e-12);
  EXPECT_NEAR(e.position.y(), -2.0 + 0.125 * yh, 1e-12);
  double tw = 0, cxx = 0, cxy = 0, cyy = 0;
  for (int v = -W; v <= W; ++v)
    for (int u = -W; u <= W; ++u) {
      const double w = p.belief.at(u, v) * p.belief.at(u, v);
      tw += w;
      cxx += w * (u - xh) * (u - xh);
      cxy += w * (u - xh) * (v - yh);
      cyy += w * (v - yh) * (v - yh);
    }
  const double s = 0.125 * 0.125 / tw;
  EXPECT_NEAR(e.covariance(0, 0), s * cxx, 1e-12);
  EXPECT_NEAR(e.covariance(0, 1), s * cxy, 1e-12);
  EXPECT_NEAR(e.covariance(1, 1), s * cyy, 1e-12);
  // The chosen peak really is a local maximum that satisfies the rule.
  const std::vector<Peak> peaks = find_peaks(p.belief);
  ASSERT_FALSE(peaks.empty());
  EXPECT_TRUE((cu == peaks[0].u && cv == peaks[0].v) || (peaks.size() > 1 && cu == peaks[1].u && cv == peaks[1].v));
}

INSTANTIATE_TEST_SUITE_P(Sizes, WindowSizes, ::testing::Values(2, 3, 5, 10, 15, 20));

// ---------------------------------------------------------------- likelihood

TEST(Likelihood, SsdMatchesDoubleLoop) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // 9x9 map patch around a 5x5 online grid; window half-width 2 (5x5 offsets).
  map::MapAccumulator acc(map::RasterParams{}, 16);
  std::map<std::pair<int, int>, std::tuple<double, double, double>> mcells;
  for (int j = -4; j <= 4; ++j)
    for (int i = -4; i <= 4; ++i) {
      if (u(rng) < 0.15) continue;  // some holes
      const double x = (i + 0.5) * 0.125, y = (j + 0.5) * 0.125;
      const double r1 = 255 * u(rng), r2 = 255 * u(rng), a = u(rng);
      acc.add_sample(x, y, a, r1);
      acc.add_sample(x, y, a + 0.1 * u(rng), r2);
    }
  const map::LidarMap m = map::finalize_map(acc);
  std::vector<std::tuple<int, int, double, double, double>> oc;
  for (int j = -2; j <= 2; ++j)
    for (int i = -2; i <= 2; ++i) oc.emplace_back(i, j, 255 * u(rng), 1.0 + 50 * u(rng), u(rng));
  const OnlineGrid g = grid_from(oc, 0.125);
  LikelihoodConfig cfg;
  cfg.n_min = 0;
  const LikelihoodResult r = measurement_likelihood(g, m, 2, cfg);
  for (int v = -2; v <= 2; ++v)
    for (int uu = -2; uu <= 2; ++uu) {
      double sr = 0.0, sa = 0.0;
      for (const auto& [i, j, rz, vz, az] : oc) {
        const auto mc = m.query(CellIndex{i + uu, j + v});
        if (!mc) continue;
        const double vm = mc->intensity_var, rm = mc->intensity_mean, am = mc->altitude_mean;
        const double rzf = static_cast<float>(rz), vzf = static_cast<float>(vz), azf = static_cast<float>(az);
        sr += (rm - rzf) * (rm - rzf) * (vm + vzf) / (vm * vzf);
        sa += (am - azf) * (am - azf);
      }
      EXPECT_NEAR(r.ssd_r.at(uu, v), sr, 1e-12 * std::max(1.0, sr));
      EXPECT_NEAR(r.ssd_a.at(uu, v), sa, 1e-12 * std::max(1.0, sa));
    }
}

TEST_P(WindowSizes, LikelihoodAndGammaMatchDirectEvaluation) {
  const int W = GetParam();
  std::mt19937_64 rng(400 + W);
  const Scene sc{Texture::random(rng), [](double x, double) { return 10.0 + 0.2 * std::sin(x); }};
  const map::LidarMap m = build_map(sc, -8, 8, -8, 8);
  std::vector<std::tuple<int, int, double, double, double>> oc;
  for (int j = -16; j < 16; ++j)
    for (int i = -16; i < 16; ++i) {
      const double x = (i + 0.5) * 0.125 + 0.2, y = (j + 0.5) * 0.125 - 0.1;
      oc.emplace_back(i, j, sc.tex(x, y), 4.0, sc.alt(x, y));
    }
  const OnlineGrid g = grid_from(oc, 0.125);
  LikelihoodConfig cfg;
  cfg.lambda = 300.0;
  const LikelihoodResult r = measurement_likelihood(g, m, W, cfg);
  // Cue likelihoods from the raw sums, normalized directly.
  const double nz = static_cast<double>(oc.size());
  Window pr(W), pa(W);
  for (std::size_t k = 0; k < pr.size(); ++k) {
    pr.p[k] = std::pow(cfg.alpha, -r.ssd_r.p[k] / (2 * nz));
    pa.p[k] = std::pow(cfg.alpha, -cfg.lambda * r.ssd_a.p[k] / (2 * nz));
  }
  normalize(pr);
  normalize(pa);
  EXPECT_LT(max_diff(r.p_r, pr), 1e-12);
  EXPECT_LT(max_diff(r.p_a, pa), 1e-12);
  // Variances and weight by direct sums.
  auto var = [&](const Window& p) {
    double sw = 0, sx = 0, sy = 0;
    for (int v = -W; v <= W; ++v)
      for (int u = -W; u <= W; ++u) {
        const double w = p.at(u, v) * p.at(u, v);
        sw += w;
        sx += w * u;
        sy += w * v;
      }
    double vx = 0, vy = 0;
    for (int v = -W; v <= W; ++v)
      for (int u = -W; u <= W; ++u) {
        const double w = p.at(u, v) * p.at(u, v);
        vx += w * (u - sx / sw) * (u - sx / sw);
        vy += w * (v - sy / sw) * (v - sy / sw);
      }
    return Vec2(std::max(vx / sw, 1.0 / 12), std::max(vy / sw, 1.0 / 12));
  };
  const Vec2 vr = var(pr), va = var(pa);
  EXPECT_NEAR(r.var_r.x(), vr.x(), 1e-12 * std::max(1.0, vr.x()));
  EXPECT_NEAR(r.var_a.y(), va.y(), 1e-12 * std::max(1.0, va.y()));
  const double gamma = va.x() * va.y() / (va.x() * va.y() + vr.x() * vr.y());
  EXPECT_NEAR(r.gamma, gamma, 1e-12);
  EXPECT_GT(r.gamma, 0.0);
  EXPECT_LT(r.gamma, 1.0);
  Window comb(W);
  for (std::size_t k = 0; k < comb.size(); ++k) comb.p[k] = std::pow(pr.p[k], gamma) * std::pow(pa.p[k], 1 - gamma);
  normalize(comb);
  EXPECT_LT(max_diff(r.combined, comb), 1e-12);
}

TEST(Likelihood, SelfMatchPeaksAtZero) {
  std::mt19937_64 rng(8);
  const Scene sc{Texture::random(rng), [](double x, double y) { return 10.0 + 0.3 * std::sin(0.9 * x) * std::cos(0.7 * y); }};
  const map::LidarMap m = build_map(sc, -6, 6, -6, 6);
  std::vector<std::tuple<int, int, double, double, double>> oc;
  for (int j = -20; j < 20; ++j)
    for (int i = -20; i < 20; ++i) {
      const double x = (i + 0.5) * 0.125, y = (j + 0.5) * 0.125;
      oc.emplace_back(i, j, sc.tex(x, y), 1.0, sc.alt(x, y));
    }
  LikelihoodConfig cfg;
  cfg.lambda = 1000.0;
  const LikelihoodResult r = measurement_likelihood(grid_from(oc, 0.125), m, 10, cfg);
  auto argmax = [](const Window& w) {
    return static_cast<int>(std::max_element(w.p.begin(), w.p.end()) - w.p.begin());
  };
  const int center = 10 * 21 + 10;
  EXPECT_EQ(argmax(r.p_r), center);
  EXPECT_EQ(argmax(r.p_a), center);
  EXPECT_EQ(argmax(r.combined), center);
}

TEST(Likelihood, GammaFollowsInformativeCue) {
  std::mt19937_64 rng(9);
  const Texture tex = Texture::random(rng);
  auto run = [&](bool flat_intensity) {
    Scene sc;
    if (flat_intensity) {
      sc.tex.base = 100.0;
      sc.alt = [&](double x, double y) { return 10.0 + 0.3 * std::sin(2.1 * x) * std::cos(1.7 * y); };
    } else {
      sc.tex = tex;
      sc.alt = [](double, double) { return 10.0; };
    }
    const map::LidarMap m = build_map(sc, -6, 6, -6, 6);
    std::vector<std::tuple<int, int, double, double, double>> oc;
    for (int j = -20; j < 20; ++j)
      for (int i = -20; i < 20; ++i) {
        const double x = (i + 0.5) * 0.125, y = (j + 0.5) * 0.125;
        oc.emplace_back(i, j, sc.tex(x, y), 1.0, sc.alt(x, y));
      }
    LikelihoodConfig cfg;
    cfg.lambda = 1000.0;
    return measurement_likelihood(grid_from(oc, 0.125), m, 10, cfg).gamma;
  };
  EXPECT_LT(run(true), 0.5);
  EXPECT_GT(run(false), 0.5);
}

TEST(Likelihood, GammaSymmetry) {
  EXPECT_EQ(adaptive_gamma(Vec2(2.0, 3.0), Vec2(1.0, 6.0)), 0.5);
  EXPECT_GT(adaptive_gamma(Vec2(1.0, 1.0), Vec2(4.0, 4.0)), 0.5);
}

TEST(Likelihood, IntensityOffsetInvariance) {
  std::mt19937_64 rng(10);
  Scene sc{Texture::random(rng)};
  Scene shifted = sc;
  shifted.tex.base += 37.0;
  std::vector<std::tuple<int, int, double, double, double>> a, b;
  for (int j = -20; j < 20; ++j)
    for (int i = -20; i < 20; ++i) {
      const double x = (i + 0.5) * 0.125 + 0.3, y = (j + 0.5) * 0.125 - 0.2;
      a.emplace_back(i, j, sc.tex(x, y), 2.0, 10.0);
      b.emplace_back(i, j, shifted.tex(x, y), 2.0, 10.0);
    }
  const LikelihoodResult ra = measurement_likelihood(grid_from(a, 0.125), build_map(sc, -6, 6, -6, 6), 8);
  const LikelihoodResult rb = measurement_likelihood(grid_from(b, 0.125), build_map(shifted, -6, 6, -6, 6), 8);
  auto argmax = [](const Window& w) { return std::max_element(w.p.begin(), w.p.end()) - w.p.begin(); };
  EXPECT_EQ(argmax(ra.combined), argmax(rb.combined));
}

TEST(Likelihood, InsufficientOverlap) {
  std::mt19937_64 rng(11);
  Scene sc{Texture::random(rng)};
  const map::LidarMap m = build_map(sc, -2, 2, -2, 2);
  std::vector<std::tuple<int, int, double, double, double>> oc;
  for (int i = 0; i < 150; ++i) oc.emplace_back(i % 10, i / 10, 100.0, 1.0, 10.0);
  try {
    measurement_likelihood(grid_from(oc, 0.125), m, 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "insufficient overlap");
  }
}

TEST(Likelihood, EmptyCoOccupancyGetsFloor) {
  std::mt19937_64 rng(12);
  Scene sc{Texture::random(rng)};
  const map::LidarMap m = build_map(sc, 0.0, 2.0, 0.0, 2.0);  // 16 x 16 cells at i, j in [0, 16)
  std::vector<std::tuple<int, int, double, double, double>> oc;
  for (int j = 0; j < 16; ++j)
    for (int i = 0; i < 16; ++i) oc.emplace_back(i, j, sc.tex((i + 0.5) / 8, (j + 0.5) / 8), 1.0, 10.0);
  LikelihoodConfig cfg;
  cfg.n_min = 10;
  const LikelihoodResult r = measurement_likelihood(grid_from(oc, 0.125), m, 18, cfg);
  EXPECT_EQ(r.overlap.front(), 0);  // offset (-18, -18) leaves no common cells
  EXPECT_NEAR(r.p_r.at(-18, -18), 1e-12 / (1.0 + 1e-12 * 4 * (2 * 37 - 2 * 16 - 1)), 1e-20);
  EXPECT_NEAR(r.combined.sum(), 1.0, 1e-12);
}

// ---------------------------------------------------------------- heading

namespace {

std::vector<TemplatePoint> rotated_template(const Texture& tex, const Vec2& pivot, double rot, double radius,
                                            double res, std::mt19937_64& rng, double keep) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<TemplatePoint> out;
  const int n = static_cast<int>(radius / res);
  const Mat2 R = detail::rot2(rot);
  for (int j = -n; j <= n; ++j)
    for (int i = -n; i <= n; ++i) {
      const Vec2 d(i * res, j * res);
      if (d.norm() > radius || u(rng) > keep) continue;
      const Vec2 w = pivot + R * d;
      out.push_back({pivot + d, tex(w.x(), w.y())});
    }
  return out;
}

}  // namespace

TEST(Heading, IdentityRegistration) {
  std::mt19937_64 rng(13);
  const Scene sc{Texture::random(rng)};
  const map::LidarMap m = build_map(sc, -12, 12, -12, 12);
  const Vec2 c(0.0625, 0.0625);
  const Raster img = map_intensity_raster(m, c, 10.0);
  std::vector<TemplatePoint> tpl;
  for (int y = 10; y < img.height - 10; ++y)
    for (int x = 10; x < img.width - 10; ++x)
      tpl.push_back({img.origin + img.resolution * Vec2(x, y), img.at(x, y)});
  const HeadingResult r = estimate_heading(tpl, img, c, 0.0);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.heading, 0.0, 1e-6);
}

TEST(Heading, RecoversTwoDegrees) {
  std::mt19937_64 rng(14);
  const Scene sc{Texture::random(rng)};
  const map::LidarMap m = build_map(sc, -14, 14, -14, 14);
  const Vec2 c(0.3, -0.2);
  const Raster img = map_intensity_raster(m, c, 12.0);
  // Template sampled from the map rotated by +2 deg: the alignment must find
  // a +2 deg image rotation, i.e. a heading 2 deg smaller than the prior.
  const auto tpl = rotated_template(sc.tex, c, 2.0 * kDeg, 9.0, 0.125, rng, 0.5);
  const HeadingResult r = estimate_heading(tpl, img, c, 0.4);
  ASSERT_TRUE(r.converged);
  EXPECT_NEAR(r.rotation, 2.0 * kDeg, 0.1 * kDeg);
  EXPECT_NEAR(r.heading, 0.4 - 2.0 * kDeg, 0.1 * kDeg);
}

TEST(Heading, RandomTexturesSubDegree) {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int trial = 0; trial < 10; ++trial) {
    const Scene sc{Texture::random(rng)};
    const map::LidarMap m = build_map(sc, -14, 14, -14, 14);
    const double rot = u(rng) * kDeg;
    const Vec2 c(0.1, 0.05);
    const auto tpl = rotated_template(sc.tex, c, rot, 9.0, 0.125, rng, 0.4);
    const HeadingResult r = estimate_heading(tpl, map_intensity_raster(m, c, 12.0), c, 0.0);
    ASSERT_TRUE(r.converged) << trial;
    EXPECT_LT(std::abs(r.rotation - rot), 1.0 * kDeg) << trial;
  }
}

TEST(Heading, InsufficientOverlap) {
  std::mt19937_64 rng(16);
  const Scene sc{Texture::random(rng)};
  const map::LidarMap m = build_map(sc, -4, 4, -4, 4);
  const auto tpl = rotated_template(sc.tex, Vec2(30, 30), 0.0, 5.0, 0.125, rng, 1.0);
  try {
    estimate_heading(tpl, map_intensity_raster(m, Vec2(0, 0), 4.0), Vec2(30, 30), 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "insufficient overlap");
  }
}

// ---------------------------------------------------------------- localizer

namespace {

struct LocScene {
  Scene sc;
  map::LidarMap m;
};

LocScene loc_scene(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Scene sc{Texture::random(rng), [](double x, double y) { return 12.0 + 0.01 * x + 0.2 * std::sin(0.8 * y); }};
  map::LidarMap m = build_map(sc, -16, 16, -16, 16);
  return {sc, std::move(m)};
}

LocalizerConfig loc_config() {
  LocalizerConfig cfg;
  cfg.likelihood.lambda = 1000.0;
  return cfg;
}

}  // namespace

TEST(Localize, SelfScan) {
  const LocScene s = loc_scene(17);
  std::mt19937_64 rng(18);
  const map::Pose6 truth{0.4, -0.3, s.sc.alt(0.4, -0.3), 0.01, -0.02, 0.7};
  const auto pts = make_scan(s.sc, truth, 9.0, rng, 0.6);
  const LocalizeOutput o = localize(s.m, pts, truth, loc_config());
  EXPECT_LT(std::hypot(o.fix.x - truth.x, o.fix.y - truth.y), 0.02);
  EXPECT_NEAR(o.fix.alt, s.sc.alt(o.fix.x, o.fix.y), 0.01);
  EXPECT_NEAR(o.posterior.belief.sum(), 1.0, 1e-12);
  Eigen::SelfAdjointEigenSolver<Mat2> es(o.fix.cov_xy);
  EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
}

TEST(Localize, KnownOffsetAndHeadingError) {
  const LocScene s = loc_scene(19);
  std::mt19937_64 rng(20);
  const map::Pose6 truth{1.0, 2.0, s.sc.alt(1.0, 2.0), 0.0, 0.0, 0.3};
  const auto pts = make_scan(s.sc, truth, 9.0, rng, 0.6);
  map::Pose6 prior = truth;
  prior.x -= 0.50;
  prior.y += 0.25;
  prior.heading += 1.0 * kDeg;
  const LocalizeOutput o = localize(s.m, pts, prior, loc_config());
  EXPECT_TRUE(o.fix.heading_estimated);
  EXPECT_NEAR(o.fix.heading, truth.heading, 0.1 * kDeg);
  EXPECT_LT(std::abs(o.fix.x - truth.x), 0.125);
  EXPECT_LT(std::abs(o.fix.y - truth.y), 0.125);
}

TEST(Localize, HeadingOffKeepsPrior) {
  const LocScene s = loc_scene(21);
  std::mt19937_64 rng(22);
  const map::Pose6 truth{0.0, 0.0, s.sc.alt(0.0, 0.0), 0.0, 0.0, 1.0};
  const auto pts = make_scan(s.sc, truth, 9.0, rng, 0.6);
  LocalizerConfig cfg = loc_config();
  cfg.estimate_heading = false;
  const LocalizeOutput o = localize(s.m, pts, truth, cfg);
  EXPECT_FALSE(o.fix.heading_estimated);
  EXPECT_EQ(o.fix.heading, 1.0);
}

TEST(Localize, StatefulTracking) {
  const LocScene s = loc_scene(23);
  std::mt19937_64 rng(24);
  LidarLocalizer loc(s.m, loc_config());
  map::Pose6 truth{-3.0, -1.0, 0.0, 0.0, 0.0, 0.5};
  std::optional<Vec2> disp;
  for (int k = 0; k < 6; ++k) {
    truth.alt = s.sc.alt(truth.x, truth.y);
    map::Pose6 prior = truth;
    prior.x += 0.2;
    const LidarFix f = loc.localize(make_scan(s.sc, truth, 8.0, rng, 0.5, 2.0, 0.01), prior, disp);
    EXPECT_LT(std::hypot(f.x - truth.x, f.y - truth.y), 0.08) << k;
    EXPECT_FALSE(f.degraded);
    disp = Vec2(1.0, 0.5);
    truth.x += 1.0;
    truth.y += 0.5;
  }
}

TEST(Localize, PfmDump) {
  testutil::TempDir dir("pfm");
  Window w(2);
  w.at(1, -2) = 0.5F;
  write_pfm(dir.file("p.pfm"), w);
  const auto bytes = read_file_bytes(dir.file("p.pfm"));
  const std::string header = "Pf\n5 5\n-1.0\n";
  ASSERT_EQ(bytes.size(), header.size() + 25 * 4);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())), header);
  float first_row[5];
  std::memcpy(first_row, bytes.data() + header.size(), sizeof first_row);
  EXPECT_EQ(first_row[3], 0.5F);  // v = -2 is written first, u = 1 is column 3
}
