#include "fusionloc/gnss/epoch_io.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace fusionloc;
using namespace fusionloc::gnss;

namespace {

struct SkyPoint {
  int id;
  double az, el;
};

const std::vector<SkyPoint> kSky = {{1, 0.3, 1.2}, {3, 1.4, 0.5},  {5, 2.6, 0.8},  {7, 3.5, 0.35},
                                    {8, 4.4, 0.95}, {11, 5.3, 0.6}, {14, 0.9, 0.3}, {17, 2.0, 0.45}};

struct Truth {
  Vec3 rover;
  Vec3 base;
  double cdt = 3.7;
  std::map<int, double> amb;
};

Truth default_truth() {
  Truth t;
  t.base = geo::geodetic_to_ecef({2.1, 0.55, 20.0});
  t.rover = geo::geodetic_to_ecef({2.1 + 3e-5, 0.55 - 2e-5, 24.0});
  for (const auto& s : kSky) t.amb[s.id] = static_cast<double>((s.id * 37) % 23 - 11);
  return t;
}

Vec3 sat_position(const Vec3& near, const SkyPoint& s) {
  const geo::Geodetic g = geo::ecef_to_geodetic(near);
  const Mat3 Rn = geo::ecef_to_enu_rotation(g.lon, g.lat);
  const Vec3 enu(std::cos(s.el) * std::sin(s.az), std::cos(s.el) * std::cos(s.az), std::sin(s.el));
  return near + 2.2e7 * (Rn.transpose() * enu);
}

GnssEpoch make_epoch(const Truth& tr, std::mt19937_64& rng, double sig_range, double sig_phase, int nsat = 8,
                     double t = 0.0) {
  std::normal_distribution<double> n01;
  GnssEpoch e;
  e.t = t;
  e.base_ecef = tr.base;
  for (int i = 0; i < nsat; ++i) {
    const SkyPoint& sp = kSky[i];
    SatObs s;
    s.id = sp.id;
    s.sat_ecef = sat_position(tr.base, sp);
    s.elevation = sp.el;
    s.wavelength = kL1Wavelength;
    const double R = sd_geometric_range(s.sat_ecef, tr.rover, tr.base);
    const double k = 1.0 / std::sin(sp.el);
    s.sd_range = R + tr.cdt + sig_range * k * n01(rng);
    s.sd_phase = R + tr.cdt - s.wavelength * tr.amb.at(sp.id) + sig_phase * k * n01(rng);
    e.sats.push_back(s);
  }
  return e;
}

// Exhaustive minimizer over a box around the rounded float vector.
VecX brute_force(const VecX& a, const MatX& Q, int half) {
  const MatX Qi = Q.inverse();
  VecX best = VecX::Zero(3);
  double best_v = std::numeric_limits<double>::max();
  const Vec3 c(std::round(a(0)), std::round(a(1)), std::round(a(2)));
  for (int i = -half; i <= half; ++i)
    for (int j = -half; j <= half; ++j)
      for (int k = -half; k <= half; ++k) {
        VecX z(3);
        z << c(0) + i, c(1) + j, c(2) + k;
        const double v = (a - z).dot(Qi * (a - z));
        if (v < best_v) {
          best_v = v;
          best = z;
        }
      }
  return best;
}

MatX random_spd(std::mt19937_64& rng, int n, double scale) {
  std::normal_distribution<double> n01;
  MatX M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = n01(rng);
  return scale * (M * M.transpose() + 0.05 * MatX::Identity(n, n));
}

}  // namespace

TEST(FloatSolution, ZeroNoiseTruthPrior) {
  const Truth tr = default_truth();
  std::mt19937_64 rng(1);
  const GnssEpoch e = make_epoch(tr, rng, 0.0, 0.0);
  const FloatSolution f = float_solution(e, tr.rover);
  EXPECT_LT(f.dx.norm(), 1e-9);
  EXPECT_NEAR(f.cdt, tr.cdt, 1e-6);
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(f.ambiguities(i), tr.amb.at(e.sats[i].id), 1e-6);
}

TEST(FloatSolution, RecoversPriorOffset) {
  const Truth tr = default_truth();
  std::mt19937_64 rng(2);
  const GnssEpoch e = make_epoch(tr, rng, 0.0, 0.0);
  const Vec3 offset(3.0, -4.0, 0.0);
  const FloatSolution f = float_solution(e, tr.rover + offset);
  EXPECT_LT((f.dx + offset).norm(), 1e-6);
}

TEST(FloatSolution, UncertaintyMatchesDirectFormula) {
  const Truth tr = default_truth();
  std::mt19937_64 rng(3);
  const GnssEpoch e = make_epoch(tr, rng, 0.5, 0.003);
  const RtkConfig cfg;
  const FloatSolution f = float_solution(e, tr.rover + Vec3(1, 1, 1), cfg);

  // Independent formulation at the solution point.
  const Vec3 x = f.position();
  const int m = 8, n = 16, r = 12;
  MatX B = MatX::Zero(n, r);
  VecX l(n), p(n);
  for (int i = 0; i < m; ++i) {
    const SatObs& s = e.sats[i];
    const Vec3 u = (s.sat_ecef - x) / (s.sat_ecef - x).norm();
    // ra - rb = (ra^2 - rb^2) / (ra + rb), with ra^2 - rb^2 expanded.
    const double ra = (s.sat_ecef - x).norm(), rb = (s.sat_ecef - e.base_ecef).norm();
    const Vec3 d = e.base_ecef - x, q = 2.0 * s.sat_ecef - x - e.base_ecef;
    const double R = (d(0) * q(0) + d(1) * q(1) + d(2) * q(2)) / (ra + rb);
    const double w = std::pow(std::sin(s.elevation), 2);
    for (int c = 0; c < 3; ++c) B(i, c) = B(m + i, c) = -u(c);
    B(i, 3) = B(m + i, 3) = 1.0;
    B(m + i, 4 + i) = -s.wavelength;
    l(i) = s.sd_range - R;
    l(m + i) = s.sd_phase - R;
    p(i) = w / (0.5 * 0.5);
    p(m + i) = w / (0.003 * 0.003);
  }
  const MatX BtPB = B.transpose() * p.asDiagonal() * B;
  const VecX xhat = BtPB.inverse() * (B.transpose() * p.asDiagonal() * l);
  const VecX V = B * xhat - l;
  const double s0 = V.dot(p.asDiagonal() * V) / (n - r);
  const MatX cov = BtPB.inverse() * s0;
  EXPECT_EQ(f.n, n);
  EXPECT_EQ(f.r, r);
  EXPECT_NEAR(f.variance_factor, s0, 1e-9 * s0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(f.covariance(i, j), cov(i, j), 1e-12 + 1e-9 * std::abs(cov(i, j)));
  EXPECT_LT((f.residuals - V).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(FloatSolution, GeometryDeficient) {
  const Truth tr = default_truth();
  std::mt19937_64 rng(4);
  const GnssEpoch e = make_epoch(tr, rng, 0.0, 0.0, 3);
  try {
    float_solution(e, tr.rover);
    FAIL();
  } catch (const Error& err) {
    EXPECT_STREQ(err.what(), "geometry deficient");
  }
}

TEST(FloatSolution, RejectsInvalidEpoch) {
  const Truth tr = default_truth();
  std::mt19937_64 rng(5);
  GnssEpoch e = make_epoch(tr, rng, 0.0, 0.0);
  e.sats[2].elevation = -0.1;
  EXPECT_THROW(float_solution(e, tr.rover), Error);
  e.sats[2].elevation = 0.5;
  e.sats[2].wavelength = 0.0;
  EXPECT_THROW(float_solution(e, tr.rover), Error);
}

TEST(SdToDd, TwoSatellites) {
  VecX N(2);
  N << 4.0, 9.5;
  const DoubleDifference dd = sd_to_dd(N, MatX::Identity(2, 2), 0);
  ASSERT_EQ(dd.values.size(), 1);
  EXPECT_DOUBLE_EQ(dd.values(0), 5.5);
}

TEST(SdToDd, IdentityCovariance) {
  const int k = 6;
  const DoubleDifference dd = sd_to_dd(VecX::Zero(k), MatX::Identity(k, k), 2);
  const MatX DDt = dd.D * dd.D.transpose();
  for (int i = 0; i < k - 1; ++i)
    for (int j = 0; j < k - 1; ++j) {
      EXPECT_EQ(dd.cov(i, j), DDt(i, j));
      EXPECT_EQ(dd.cov(i, j), i == j ? 2.0 : 1.0);
    }
}

TEST(SdToDd, RandomCovariance) {
  std::mt19937_64 rng(6);
  const MatX S = random_spd(rng, 7, 0.3);
  VecX N = VecX::LinSpaced(7, -3.0, 4.0);
  const DoubleDifference dd = sd_to_dd(N, S, 4);
  MatX D = MatX::Zero(6, 7);
  int row = 0;
  for (int i = 0; i < 7; ++i)
    if (i != 4) {
      D(row, i) = 1;
      D(row++, 4) = -1;
    }
  EXPECT_LT((dd.cov - D * S * D.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((dd.values - D * N).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(IntegerSearch, IntegerInputIdentity) {
  VecX a(4);
  a << 3, -7, 0, 12;
  const AmbiguityResolution r = resolve_ambiguities(a, MatX::Identity(4, 4));
  ASSERT_TRUE(r.search_ok);
  EXPECT_TRUE(r.fixed);
  EXPECT_EQ(r.best, a);
  EXPECT_GT(r.ratio, 1e6);
}

TEST(IntegerSearch, MatchesExhaustiveEnumeration) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int trial = 0; trial < 100; ++trial) {
    const MatX Q = random_spd(rng, 3, 0.2);
    VecX a(3);
    a << u(rng), u(rng), u(rng);
    const IntegerSearchResult s = integer_search(a, Q);
    ASSERT_TRUE(s.ok);
    EXPECT_EQ(s.candidates[0], brute_force(a, Q, 10)) << "trial " << trial;
    EXPECT_LE(s.residuals[0], s.residuals[1]);
  }
}

TEST(IntegerSearch, InvariantUnderUnimodularTransform) {
  std::mt19937_64 rng(8);
  MatX Z(3, 3);
  Z << 1, 2, 0, 0, 1, -1, 1, 3, 0;  // det = 1
  ASSERT_NEAR(std::abs(Z.determinant()), 1.0, 1e-12);
  for (int trial = 0; trial < 20; ++trial) {
    const MatX Q = random_spd(rng, 3, 0.3);
    VecX a = VecX::Random(3) * 5.0;
    const VecX z1 = integer_search(a, Q).candidates[0];
    const VecX z2 = integer_search(Z * a, Z * Q * Z.transpose()).candidates[0];
    EXPECT_LT((Z * z1 - z2).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(IntegerSearch, LowRatioNotFixed) {
  VecX a(2);
  a << 0.5, 0.5;
  const AmbiguityResolution r = resolve_ambiguities(a, MatX::Identity(2, 2));
  ASSERT_TRUE(r.search_ok);
  EXPECT_FALSE(r.fixed);
  EXPECT_LT(r.ratio, 3.0);
}

TEST(IntegerSearch, NonSpdFails) {
  VecX a = VecX::Zero(2);
  MatX Q(2, 2);
  Q << 1, 2, 2, 1;
  EXPECT_FALSE(integer_search(a, Q).ok);
}

TEST(Rtk, FixedZeroNoiseReproducesTruth) {
  const Truth tr = default_truth();
  std::mt19937_64 rng(9);
  const GnssEpoch e = make_epoch(tr, rng, 0.0, 0.0);
  const RtkSolution s = rtk_solution(e, tr.rover + Vec3(0.3, -0.2, 0.4));
  EXPECT_TRUE(s.fixed);
  EXPECT_LT((s.position_ecef - tr.rover).norm(), 1e-3);
  for (int i = 0; i < s.ambiguities.size(); ++i) EXPECT_EQ(s.ambiguities(i), std::round(s.ambiguities(i)));
  EXPECT_TRUE((s.variance.array() > 0).all());
}

TEST(Rtk, NominalNoiseFixesWithTightPrior) {
  const Truth tr = default_truth();
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n01;
  int correct = 0;
  for (int i = 0; i < 50; ++i) {
    const GnssEpoch e = make_epoch(tr, rng, 0.5, 0.003);
    const Vec3 ins = tr.rover + 0.03 * Vec3(n01(rng), n01(rng), n01(rng));
    const RtkSolution s = ins_aided_solution(e, ins, PositionPrior{ins, Mat3::Identity() * 9e-4});
    if (s.fixed && !s.ins_dependent && (s.position_ecef - tr.rover).norm() < 0.05) ++correct;
  }
  EXPECT_GE(correct, 48);
}

TEST(Rtk, FloatRmsMonotoneInNoise) {
  const Truth tr = default_truth();
  double prev = 0.0;
  for (double k : {0.5, 1.0, 2.0, 4.0}) {
    std::mt19937_64 rng(11);
    double sum = 0.0;
    for (int i = 0; i < 200; ++i) {
      const GnssEpoch e = make_epoch(tr, rng, 0.5 * k, 0.003 * k);
      sum += (float_solution(e, tr.rover).position() - tr.rover).squaredNorm();
    }
    const double rms = std::sqrt(sum / 200);
    EXPECT_GT(rms, prev);
    prev = rms;
  }
}

TEST(Rtk, VarianceScalesWithNoise) {
  const Truth tr = default_truth();
  auto mean_var = [&](double k) {
    std::mt19937_64 rng(12);
    double sum = 0.0;
    for (int i = 0; i < 400; ++i) {
      const GnssEpoch e = make_epoch(tr, rng, 0.5 * k, 0.003 * k);
      sum += float_solution(e, tr.rover).position_covariance().trace();
    }
    return sum / 400;
  };
  EXPECT_NEAR(mean_var(2.0) / mean_var(1.0), 4.0, 1.0);
}

TEST(Rtk, InfinitePriorEqualsUnaided) {
  const Truth tr = default_truth();
  std::mt19937_64 rng(13);
  const GnssEpoch e = make_epoch(tr, rng, 0.5, 0.003);
  const Vec3 x0 = tr.rover + Vec3(1, -1, 0.5);
  const FloatSolution plain = float_solution(e, x0);
  const FloatSolution aided = float_solution(e, x0, {}, PositionPrior{tr.rover, Mat3::Identity() * 1e30});
  EXPECT_LT((plain.dx - aided.dx).norm(), 1e-9);
  EXPECT_LT((plain.ambiguities - aided.ambiguities).cwiseAbs().maxCoeff(), 1e-9);
  const FloatSolution inf_prior =
      float_solution(e, x0, {}, PositionPrior{tr.rover, Mat3::Identity() * std::numeric_limits<double>::infinity()});
  EXPECT_LT((plain.dx - inf_prior.dx).norm(), 1e-12);
}

TEST(Rtk, TwoSatellitesSolvableWithInsPrior) {
  const Truth tr = default_truth();
  std::mt19937_64 rng(14);
  const GnssEpoch e = make_epoch(tr, rng, 0.0, 0.0, 2);
  EXPECT_THROW(float_solution(e, tr.rover), Error);
  const PositionPrior prior{tr.rover + Vec3(0.01, 0.0, -0.01), Mat3::Identity() * 1e-4};
  const RtkSolution s = ins_aided_solution(e, tr.rover + Vec3(0.5, 0.5, 0.5), prior);
  EXPECT_TRUE(s.fixed);
  EXPECT_TRUE(s.ins_dependent);
  EXPECT_LT((s.position_ecef - tr.rover).norm(), 0.05);
}

TEST(Rtk, InsAidingDoesNotReduceSuccess) {
  const Truth tr = default_truth();
  std::mt19937_64 rng(15);
  std::normal_distribution<double> n01;
  int plain_ok = 0, aided_ok = 0;
  for (int i = 0; i < 200; ++i) {
    const GnssEpoch e = make_epoch(tr, rng, 3.0, 0.003);
    const Vec3 ins = tr.rover + 0.1 * Vec3(n01(rng), n01(rng), n01(rng));
    const RtkSolution a = rtk_solution(e, ins);
    const RtkSolution b = ins_aided_solution(e, ins, PositionPrior{ins, Mat3::Identity() * 0.01});
    plain_ok += a.fixed && (a.position_ecef - tr.rover).norm() < 0.05;
    aided_ok += b.fixed && (b.position_ecef - tr.rover).norm() < 0.05;
  }
  EXPECT_GE(aided_ok, plain_ok);
  EXPECT_GT(aided_ok, 100);
}

namespace {

struct SlipPair {
  GnssEpoch prev, cur;
  Vec3 x_prev, x_cur;
};

SlipPair slip_pair(std::mt19937_64& rng, const std::map<int, int>& slips) {
  Truth tr = default_truth();
  SlipPair p;
  p.x_prev = tr.rover;
  p.prev = make_epoch(tr, rng, 0.5, 0.003, 8, 0.0);
  tr.rover += Vec3(1.2, -1.5, 0.1);
  tr.cdt += 0.8;
  for (const auto& [id, c] : slips) tr.amb[id] += c;
  p.x_cur = tr.rover;
  p.cur = make_epoch(tr, rng, 0.5, 0.003, 8, 0.2);
  return p;
}

PositionPrior increment_prior(const SlipPair& p, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  return {p.x_cur - p.x_prev + 0.01 * Vec3(n01(rng), n01(rng), n01(rng)), Mat3::Identity() * 1e-4};
}

}  // namespace

TEST(CycleSlip, NoSlips) {
  std::mt19937_64 rng(16);
  const SlipPair p = slip_pair(rng, {});
  const SlipDetection d = detect_cycle_slips(p.prev, p.cur, p.x_prev, increment_prior(p, rng));
  EXPECT_TRUE(d.available);
  EXPECT_TRUE(d.reliable);
  EXPECT_TRUE(d.suspect.empty());
}

TEST(CycleSlip, SingleSlipFlagged) {
  std::mt19937_64 rng(17);
  const SlipPair p = slip_pair(rng, {{7, 1}});
  const SlipDetection d = detect_cycle_slips(p.prev, p.cur, p.x_prev, increment_prior(p, rng));
  ASSERT_TRUE(d.reliable);
  ASSERT_EQ(d.suspect.size(), 1u);
  EXPECT_EQ(d.suspect[0], 7);
  EXPECT_EQ(d.slips.at(7), 1);
}

TEST(CycleSlip, TwoSlipsMonteCarlo) {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 100; ++trial) {
    const SlipPair p = slip_pair(rng, {{3, 3}, {14, -2}});
    const SlipDetection d = detect_cycle_slips(p.prev, p.cur, p.x_prev, increment_prior(p, rng));
    ASSERT_TRUE(d.reliable) << trial;
    ASSERT_EQ(d.slips.size(), 2u) << trial;
    EXPECT_EQ(d.slips.at(3), 3);
    EXPECT_EQ(d.slips.at(14), -2);
  }
}

TEST(CycleSlip, SlipOnReferenceSatellite) {
  std::mt19937_64 rng(19);
  const SlipPair p = slip_pair(rng, {{1, -4}});  // satellite 1 has the highest elevation
  const SlipDetection d = detect_cycle_slips(p.prev, p.cur, p.x_prev, increment_prior(p, rng));
  ASSERT_EQ(d.slips.size(), 1u);
  EXPECT_EQ(d.slips.at(1), -4);
}

TEST(CycleSlip, TooFewCommonSatellites) {
  std::mt19937_64 rng(20);
  SlipPair p = slip_pair(rng, {});
  p.prev.sats.resize(3);
  const SlipDetection d = detect_cycle_slips(p.prev, p.cur, p.x_prev, increment_prior(p, rng));
  EXPECT_FALSE(d.available);
  EXPECT_EQ(d.message, "slip detection unavailable");
  EXPECT_EQ(d.suspect.size(), p.cur.sats.size());
}

TEST(EpochIo, RoundTrip) {
  const Truth tr = default_truth();
  std::mt19937_64 rng(21);
  std::vector<GnssEpoch> epochs = {make_epoch(tr, rng, 0.5, 0.003, 8, 0.0), make_epoch(tr, rng, 0.5, 0.003, 5, 0.2)};
  std::stringstream ss;
  write_epochs(ss, epochs);
  const std::vector<GnssEpoch> back = read_epochs(ss);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(back[k].t, epochs[k].t);
    EXPECT_EQ(back[k].base_ecef, epochs[k].base_ecef);
    ASSERT_EQ(back[k].sats.size(), epochs[k].sats.size());
    for (std::size_t i = 0; i < back[k].sats.size(); ++i) {
      EXPECT_EQ(back[k].sats[i].sat_ecef, epochs[k].sats[i].sat_ecef);
      EXPECT_EQ(back[k].sats[i].sd_phase, epochs[k].sats[i].sd_phase);
      EXPECT_EQ(back[k].sats[i].elevation, epochs[k].sats[i].elevation);
    }
  }
}

TEST(EpochIo, Malformed) {
  std::stringstream ss("epoch 0 2 1 2 3\nsat 1 1 2 3 4 5 0.19 0.5\n");
  EXPECT_THROW(read_epochs(ss), Error);
  std::stringstream ss2("sat 1 1 2 3 4 5 0.19 0.5\n");
  EXPECT_THROW(read_epochs(ss2), Error);
}
