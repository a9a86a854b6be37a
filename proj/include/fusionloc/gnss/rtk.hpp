#pragma once

#include "fusionloc/core/types.hpp"
#include "fusionloc/geo/earth.hpp"
#include "fusionloc/gnss/lambda.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fusionloc::gnss {

inline constexpr double kL1Wavelength = 0.1903;

struct SatObs {
  int id = 0;
  Vec3 sat_ecef = Vec3::Zero();
  double sd_range = 0.0;  // m
  double sd_phase = 0.0;  // m
  double wavelength = kL1Wavelength;
  double elevation = 0.0;  // rad
};

struct GnssEpoch {
  double t = 0.0;
  Vec3 base_ecef = Vec3::Zero();
  std::vector<SatObs> sats;

  const SatObs* find(int id) const {
    for (const auto& s : sats)
      if (s.id == id) return &s;
    return nullptr;
  }
};

inline void validate_epoch(const GnssEpoch& e) {
  if (!std::isfinite(e.t) || !all_finite(e.base_ecef)) fail(ErrorKind::input, "non-finite epoch header");
  for (const auto& s : e.sats) {
    if (!(s.wavelength > 0.0)) fail(ErrorKind::input, "wavelength must be positive");
    if (!(s.elevation > 0.0 && s.elevation <= kPi / 2)) fail(ErrorKind::input, "elevation out of range");
    if (!all_finite(s.sat_ecef) || !std::isfinite(s.sd_range) || !std::isfinite(s.sd_phase))
      fail(ErrorKind::input, "non-finite observation");
  }
}

struct RtkConfig {
  double sigma_phase = 0.003;  // m at zenith
  double sigma_range = 0.5;
  double ratio_threshold = 3.0;
  long search_cap = 100000;
  int max_iterations = 10;
};

/// Single-differenced geometry at a rover position.
/// Evaluated as a ratio so the two ~2e7 m ranges do not cancel.
inline double sd_geometric_range(const Vec3& sat, const Vec3& rover, const Vec3& base) {
  const double ra = (sat - rover).norm(), rb = (sat - base).norm();
  return (base - rover).dot(2.0 * sat - rover - base) / (ra + rb);
}
inline double sd_geometric_range(const SatObs& s, const Vec3& rover, const Vec3& base) {
  return sd_geometric_range(s.sat_ecef, rover, base);
}
inline Vec3 sd_line_of_sight(const SatObs& s, const Vec3& rover) { return -(s.sat_ecef - rover).normalized(); }

inline double observation_weight(double sigma, double elevation) {
  const double se = std::sin(elevation);
  return se * se / (sigma * sigma);
}

struct FloatSolution {
  Vec3 x0 = Vec3::Zero();   // prior rover position (ECEF)
  Vec3 dx = Vec3::Zero();   // correction
  double cdt = 0.0;         // relative clock offset times c (m)
  VecX ambiguities;         // SD, cycles, satellite order of the epoch
  MatX cofactor;            // (A^T P A)^-1 over [dx, cdt, N]
  MatX covariance;          // cofactor scaled by the variance factor
  VecX residuals;           // SD observations only: ranges then phases
  VecX weights;
  double variance_factor = 1.0;  // V^T P V / (n - r), 1 when n <= r
  int n = 0;
  int r = 0;

  Vec3 position() const { return x0 + dx; }
  Mat3 position_covariance() const { return covariance.topLeftCorner<3, 3>(); }
};

/// Virtual observation of the rover position with covariance (ECEF, m^2).
struct PositionPrior {
  Vec3 x = Vec3::Zero();
  Mat3 cov = Mat3::Identity();
};

namespace detail {

inline Mat3 prior_information(const Mat3& cov) {
  if (!all_finite(cov)) return Mat3::Zero();
  Eigen::LLT<Mat3> llt(cov);
  if (llt.info() != Eigen::Success) fail(ErrorKind::input, "prior covariance not positive definite");
  return llt.solve(Mat3::Identity());
}

// Rank test on the column-scaled normal matrix.
inline bool well_posed(const MatX& N) {
  const VecX d = N.diagonal();
  if ((d.array() <= 0.0).any()) return false;
  const VecX s = d.cwiseSqrt().cwiseInverse();
  const MatX Ns = s.asDiagonal() * N * s.asDiagonal();
  Eigen::SelfAdjointEigenSolver<MatX> es(Ns, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() > 1e-10 * es.eigenvalues().maxCoeff();
}

// Weighted least squares over the SD code/phase model with optional fixed SD ambiguities.
// Unknowns: dx (3), cdt, then one SD ambiguity per satellite, or a single
// common reference ambiguity when `fixed_dd` is given.
struct WlsProblem {
  const GnssEpoch* epoch = nullptr;
  Vec3 x0 = Vec3::Zero();
  const RtkConfig* cfg = nullptr;
  std::optional<PositionPrior> prior;
  std::optional<VecX> fixed_offsets;  // integer SD offsets relative to a common ambiguity
};

inline FloatSolution solve_wls(const WlsProblem& p) {
  const GnssEpoch& e = *p.epoch;
  const RtkConfig& cfg = *p.cfg;
  const int m = static_cast<int>(e.sats.size());
  if (m < 1) fail(ErrorKind::input, "geometry deficient");
  const bool fixed = p.fixed_offsets.has_value();
  const int na = fixed ? 1 : m;
  const int r = 4 + na;
  const int n = 2 * m;
  const Mat3 W_prior = p.prior ? prior_information(p.prior->cov) : Mat3::Zero();

  FloatSolution out;
  out.x0 = p.x0;
  out.n = n;
  out.r = r;
  VecX est = VecX::Zero(r);
  // dx is accumulated on its own: ECEF coordinates near 6.4e6 m carry ~1e-9 m rounding.
  Vec3 dx = Vec3::Zero();
  Vec3 x = p.x0;
  MatX A(n, r);
  VecX l(n), w(n);
  MatX N;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    A.setZero();
    for (int i = 0; i < m; ++i) {
      const SatObs& s = e.sats[i];
      const double R = sd_geometric_range(s, x, e.base_ecef);
      const Vec3 los = sd_line_of_sight(s, x);
      A.block<1, 3>(i, 0) = los.transpose();
      A(i, 3) = 1.0;
      l(i) = s.sd_range - R;
      w(i) = observation_weight(cfg.sigma_range, s.elevation);
      A.block<1, 3>(m + i, 0) = los.transpose();
      A(m + i, 3) = 1.0;
      A(m + i, 4 + (fixed ? 0 : i)) = -s.wavelength;
      l(m + i) = s.sd_phase - R + (fixed ? s.wavelength * (*p.fixed_offsets)(i) : 0.0);
      w(m + i) = observation_weight(cfg.sigma_phase, s.elevation);
    }
    N = A.transpose() * w.asDiagonal() * A;
    VecX b = A.transpose() * (w.asDiagonal() * l);
    if (p.prior) {
      N.topLeftCorner<3, 3>() += W_prior;
      b.head<3>() += W_prior * ((p.prior->x - p.x0) - dx);
    }
    if (!well_posed(N)) fail(ErrorKind::numerical, "geometry deficient");
    const VecX sol = N.ldlt().solve(b);
    // Position is the only nonlinear unknown; the others are re-solved each pass.
    dx += sol.head<3>();
    x = p.x0 + dx;
    est = sol;
    if (sol.head<3>().norm() < 1e-10) break;
  }
  // Final linearization at the converged position.
  for (int i = 0; i < m; ++i) {
    const SatObs& s = e.sats[i];
    const double R = sd_geometric_range(s, x, e.base_ecef);
    l(i) = s.sd_range - R;
    l(m + i) = s.sd_phase - R + (fixed ? s.wavelength * (*p.fixed_offsets)(i) : 0.0);
  }
  out.dx = dx;
  out.cdt = est(3);
  out.ambiguities = est.tail(na);
  // Residuals at the solution: the position increment is zero at convergence.
  VecX xs = est;
  xs.head<3>().setZero();
  out.residuals = A * xs - l;
  out.weights = w;
  out.cofactor = N.ldlt().solve(MatX::Identity(r, r));
  const double vpv = out.residuals.dot(w.asDiagonal() * out.residuals);
  out.variance_factor = n > r ? vpv / (n - r) : 1.0;
  out.covariance = out.cofactor * out.variance_factor;
  return out;
}

}  // namespace detail

/// Float SD solution by weighted least squares.
inline FloatSolution float_solution(const GnssEpoch& epoch, const Vec3& prior_x, const RtkConfig& cfg = {},
                                    const std::optional<PositionPrior>& ins = std::nullopt) {
  validate_epoch(epoch);
  detail::WlsProblem p;
  p.epoch = &epoch;
  p.x0 = prior_x;
  p.cfg = &cfg;
  p.prior = ins;
  return detail::solve_wls(p);
}

/// Index of the highest-elevation satellite.
inline int reference_satellite(const GnssEpoch& epoch) {
  if (epoch.sats.empty()) fail(ErrorKind::input, "empty epoch");
  int best = 0;
  for (int i = 1; i < static_cast<int>(epoch.sats.size()); ++i)
    if (epoch.sats[i].elevation > epoch.sats[best].elevation) best = i;
  return best;
}

struct DoubleDifference {
  MatX D;        // (m-1) x m
  VecX values;   // D N
  MatX cov;      // D Q D^T
  int reference = 0;
  std::vector<int> others;  // SD index of each DD row
};

inline MatX dd_matrix(int m, int ref) {
  if (m < 2) fail(ErrorKind::input, "at least two satellites required");
  if (ref < 0 || ref >= m) fail(ErrorKind::input, "reference out of range");
  MatX D = MatX::Zero(m - 1, m);
  int row = 0;
  for (int i = 0; i < m; ++i) {
    if (i == ref) continue;
    D(row, i) = 1.0;
    D(row, ref) = -1.0;
    ++row;
  }
  return D;
}

inline DoubleDifference sd_to_dd(const VecX& N, const MatX& Q, int ref) {
  const int m = static_cast<int>(N.size());
  if (Q.rows() != m || Q.cols() != m) fail(ErrorKind::input, "covariance dimension mismatch");
  DoubleDifference dd;
  dd.D = dd_matrix(m, ref);
  dd.values = dd.D * N;
  dd.cov = dd.D * Q * dd.D.transpose();
  dd.reference = ref;
  for (int i = 0; i < m; ++i)
    if (i != ref) dd.others.push_back(i);
  return dd;
}

struct AmbiguityResolution {
  bool fixed = false;
  double ratio = 0.0;
  VecX best;  // integer DD ambiguities (best candidate), empty if the search failed
  VecX second;
  bool search_ok = false;
};

inline AmbiguityResolution resolve_ambiguities(const VecX& a_hat, const MatX& Q_a, double ratio_threshold = 3.0,
                                               long cap = 100000) {
  AmbiguityResolution out;
  const IntegerSearchResult s = integer_search(a_hat, Q_a, 2, cap);
  out.search_ok = s.ok;
  if (!s.ok) return out;
  out.best = s.candidates[0];
  if (s.candidates.size() > 1) out.second = s.candidates[1];
  out.ratio = s.ratio;
  out.fixed = s.candidates.size() > 1 && s.ratio >= ratio_threshold;
  return out;
}

struct RtkSolution {
  Vec3 dx_r = Vec3::Zero();
  Vec3 position_ecef = Vec3::Zero();
  geo::Geodetic position;
  bool fixed = false;
  VecX ambiguities;  // integer DD (fixed) or float SD cycles
  Mat3 cov_ecef = Mat3::Identity();
  Mat3 cov_enu = Mat3::Identity();
  Vec3 variance = Vec3::Ones();  // delta_g^2 per ENU axis
  double ratio = 0.0;
  double variance_factor = 1.0;
  bool ins_dependent = false;  // position carries the INS virtual observation
  int reference_sat = -1;
};

namespace detail {

inline RtkSolution finish(const FloatSolution& f, bool fixed, bool ins_dependent) {
  RtkSolution s;
  s.dx_r = f.dx;
  s.position_ecef = f.position();
  s.position = geo::ecef_to_geodetic(s.position_ecef);
  s.fixed = fixed;
  s.cov_ecef = f.position_covariance();
  const Mat3 Rn = geo::ecef_to_enu_rotation(s.position.lon, s.position.lat);
  s.cov_enu = Rn * s.cov_ecef * Rn.transpose();
  s.variance = s.cov_enu.diagonal();
  s.variance_factor = f.variance_factor;
  s.ins_dependent = ins_dependent;
  return s;
}

}  // namespace detail

/// RTK solution with optional INS virtual observation. The INS prior only
/// narrows the ambiguity search; once integers are fixed the position is
/// recomputed from GNSS alone when that is solvable, so the result stays
/// uncorrelated with the INS state it will update.
inline RtkSolution ins_aided_solution(const GnssEpoch& epoch, const Vec3& prior_x,
                                      const std::optional<PositionPrior>& ins, const RtkConfig& cfg = {}) {
  const FloatSolution aided = float_solution(epoch, prior_x, cfg, ins);
  const int m = static_cast<int>(epoch.sats.size());
  const int ref = reference_satellite(epoch);

  auto unaided_or_aided = [&](bool fixed_flag) {
    std::optional<FloatSolution> plain;
    if (ins) {
      try {
        plain = float_solution(epoch, prior_x, cfg);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::numerical) throw;
      }
    }
    RtkSolution s = plain ? detail::finish(*plain, fixed_flag, false) : detail::finish(aided, fixed_flag, ins.has_value());
    s.ambiguities = plain ? plain->ambiguities : aided.ambiguities;
    s.reference_sat = ref;
    return s;
  };

  if (m < 2) return unaided_or_aided(false);
  const MatX Qn = aided.covariance.bottomRightCorner(m, m);
  const DoubleDifference dd = sd_to_dd(aided.ambiguities, Qn, ref);
  const AmbiguityResolution ar = resolve_ambiguities(dd.values, dd.cov, cfg.ratio_threshold, cfg.search_cap);
  if (!ar.fixed) {
    RtkSolution s = unaided_or_aided(false);
    s.ratio = ar.ratio;
    return s;
  }
  VecX offsets = VecX::Zero(m);
  for (int k = 0; k < m - 1; ++k) offsets(dd.others[k]) = ar.best(k);

  detail::WlsProblem p;
  p.epoch = &epoch;
  p.x0 = prior_x;
  p.cfg = &cfg;
  p.fixed_offsets = offsets;
  std::optional<FloatSolution> fixed_sol;
  bool dependent = false;
  try {
    fixed_sol = detail::solve_wls(p);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::numerical || !ins) throw;
    p.prior = ins;
    fixed_sol = detail::solve_wls(p);
    dependent = true;
  }
  RtkSolution s = detail::finish(*fixed_sol, true, dependent);
  s.ambiguities = ar.best;
  s.ratio = ar.ratio;
  s.reference_sat = ref;
  return s;
}

inline RtkSolution rtk_solution(const GnssEpoch& epoch, const Vec3& prior_x, const RtkConfig& cfg = {}) {
  return ins_aided_solution(epoch, prior_x, std::nullopt, cfg);
}

struct SlipDetection {
  bool available = false;
  bool reliable = false;  // ratio test passed
  std::string message;
  std::vector<int> suspect;  // satellite ids
  std::map<int, int> slips;  // satellite id -> cycles (when reliable)
  double ratio = 0.0;
};

/// Time-differenced cycle-slip detection between consecutive epochs.
/// `x_prev` is the rover position at k-1; `increment` is the predicted
/// displacement from k-1 to k with its covariance, used as a virtual
/// observation on dx_k (pass nullopt for a range-only estimate).
inline SlipDetection detect_cycle_slips(const GnssEpoch& prev, const GnssEpoch& cur, const Vec3& x_prev,
                                        const std::optional<PositionPrior>& increment, const RtkConfig& cfg = {}) {
  validate_epoch(prev);
  validate_epoch(cur);
  SlipDetection out;
  std::vector<std::pair<const SatObs*, const SatObs*>> common;
  for (const auto& s : cur.sats)
    if (const SatObs* p = prev.find(s.id)) common.emplace_back(p, &s);
  if (common.size() < 4) {
    out.message = "slip detection unavailable";
    for (const auto& s : cur.sats) out.suspect.push_back(s.id);
    return out;
  }
  out.available = true;

  // Time-differenced observations become an ordinary epoch whose "geometry"
  // is the change of SD range between the two epochs.
  const Vec3 x_k0 = x_prev + (increment ? increment->x : Vec3::Zero());
  const int m = static_cast<int>(common.size());
  MatX A = MatX::Zero(2 * m, 4 + m);
  VecX l(2 * m), w(2 * m);
  for (int i = 0; i < m; ++i) {
    const SatObs& a = *common[i].first;
    const SatObs& b = *common[i].second;
    const double dR = sd_geometric_range(b, x_k0, cur.base_ecef) - sd_geometric_range(a, x_prev, prev.base_ecef);
    const Vec3 los = sd_line_of_sight(b, x_k0);
    const double el = std::min(a.elevation, b.elevation);
    A.block<1, 3>(i, 0) = los.transpose();
    A(i, 3) = 1.0;
    l(i) = (b.sd_range - a.sd_range) - dR;
    w(i) = observation_weight(cfg.sigma_range, el) / 2.0;
    A.block<1, 3>(m + i, 0) = los.transpose();
    A(m + i, 3) = 1.0;
    A(m + i, 4 + i) = -b.wavelength;
    l(m + i) = (b.sd_phase - a.sd_phase) - dR;
    w(m + i) = observation_weight(cfg.sigma_phase, el) / 2.0;
  }
  MatX N = A.transpose() * w.asDiagonal() * A;
  const VecX bvec = A.transpose() * (w.asDiagonal() * l);
  if (increment) N.topLeftCorner<3, 3>() += detail::prior_information(increment->cov);
  if (!detail::well_posed(N)) {
    out.available = false;
    out.message = "slip detection unavailable";
    for (const auto& s : cur.sats) out.suspect.push_back(s.id);
    return out;
  }
  const auto ldlt = N.ldlt();
  const VecX est = ldlt.solve(bvec);
  const MatX Q = ldlt.solve(MatX::Identity(4 + m, 4 + m));
  const VecX dN = est.tail(m);
  const MatX QN = Q.bottomRightCorner(m, m);

  int ref = 0;
  for (int i = 1; i < m; ++i)
    if (common[i].second->elevation > common[ref].second->elevation) ref = i;
  const DoubleDifference dd = sd_to_dd(dN, QN, ref);
  const AmbiguityResolution ar = resolve_ambiguities(dd.values, dd.cov, cfg.ratio_threshold, cfg.search_cap);
  out.ratio = ar.ratio;
  if (!ar.fixed) {
    out.message = "ambiguity test failed";
    for (const auto& p : common) out.suspect.push_back(p.second->id);
    return out;
  }
  out.reliable = true;

  // DD values only fix slips up to a common offset; pick the offset that
  // leaves the largest number of satellites unslipped.
  std::vector<long> dd_int(m, 0);
  for (int k = 0; k < m - 1; ++k) dd_int[dd.others[k]] = std::lround(ar.best(k));
  std::map<long, int> votes;
  for (int i = 0; i < m; ++i) ++votes[-dd_int[i]];
  long ref_slip = 0;
  int best_votes = -1;
  for (const auto& [v, c] : votes)
    if (c > best_votes || (c == best_votes && std::abs(v) < std::abs(ref_slip))) {
      best_votes = c;
      ref_slip = v;
    }
  for (int i = 0; i < m; ++i) {
    const long s = dd_int[i] + ref_slip;
    if (s != 0) {
      out.suspect.push_back(common[i].second->id);
      out.slips[common[i].second->id] = static_cast<int>(s);
    }
  }
  return out;
}

}  // namespace fusionloc::gnss
