#pragma once

#include "fusionloc/eval/trajectory_io.hpp"

#include <json.hpp>

#include <functional>
#include <iostream>

namespace fusionloc::eval {

/// Horizontal error of one estimate, split along and across the true
/// heading (longitudinal positive forward, lateral positive right).
struct EpochError {
  double t = 0.0;
  double longitudinal = 0.0;
  double lateral = 0.0;
  double horizontal = 0.0;
};

struct Aggregates {
  std::size_t epochs = 0;
  double horiz_rms = 0.0;
  double horiz_max = 0.0;
  double long_rms = 0.0;
  double lat_rms = 0.0;
  double below_30cm = 0.0;  // fraction of epochs with horizontal error < 0.3 m
};

struct EvaluationReport {
  std::vector<EpochError> epochs;
  Aggregates all;
  std::size_t skipped = 0;  // estimates without truth within the tolerance
};

inline constexpr double kAlignmentTolerance = 0.01;  // s
inline constexpr double kGoodThreshold = 0.3;        // m

inline EpochError epoch_error(const NavRecord& est, const NavRecord& truth) {
  const Vec2 e = est.xy - truth.xy;
  const double h = truth.euler.heading;
  EpochError out;
  out.t = est.t;
  out.longitudinal = e.x() * std::sin(h) + e.y() * std::cos(h);
  out.lateral = e.x() * std::cos(h) - e.y() * std::sin(h);
  out.horizontal = e.norm();
  return out;
}

inline Aggregates aggregate(const std::vector<EpochError>& errs,
                            const std::function<bool(double)>& include = nullptr) {
  Aggregates a;
  double sh = 0.0, sl = 0.0, st = 0.0;
  std::size_t good = 0;
  for (const EpochError& e : errs) {
    if (include && !include(e.t)) continue;
    ++a.epochs;
    sh += e.horizontal * e.horizontal;
    sl += e.longitudinal * e.longitudinal;
    st += e.lateral * e.lateral;
    a.horiz_max = std::max(a.horiz_max, e.horizontal);
    good += e.horizontal < kGoodThreshold;
  }
  if (a.epochs == 0) return a;
  const auto n = static_cast<double>(a.epochs);
  a.horiz_rms = std::sqrt(sh / n);
  a.long_rms = std::sqrt(sl / n);
  a.lat_rms = std::sqrt(st / n);
  a.below_30cm = static_cast<double>(good) / n;
  return a;
}

/// Pairs each estimate with the nearest truth sample. Estimates farther
/// than 10 ms from any truth sample are skipped with a warning.
inline EvaluationReport evaluate(const std::vector<NavRecord>& est, const std::vector<NavRecord>& truth,
                                 std::ostream* warn = &std::cerr) {
  if (truth.empty()) fail(ErrorKind::input, "evaluate: empty truth");
  EvaluationReport rep;
  for (const NavRecord& e : est) {
    auto it = std::lower_bound(truth.begin(), truth.end(), e.t, [](const NavRecord& r, double t) { return r.t < t; });
    const NavRecord* best = nullptr;
    if (it != truth.end()) best = &*it;
    if (it != truth.begin() && (!best || std::abs(std::prev(it)->t - e.t) < std::abs(best->t - e.t))) best = &*std::prev(it);
    if (std::abs(best->t - e.t) > kAlignmentTolerance) {
      ++rep.skipped;
      if (warn) *warn << "warning: no truth within 10 ms of t=" << e.t << ", epoch skipped\n";
      continue;
    }
    if (!e.xy.allFinite()) fail(ErrorKind::numerical, "evaluate: non-finite estimate at t=" + std::to_string(e.t));
    rep.epochs.push_back(epoch_error(e, *best));
  }
  rep.all = aggregate(rep.epochs);
  return rep;
}

inline nlohmann::json aggregates_json(const Aggregates& a) {
  return {{"epochs", a.epochs},         {"horiz_rms", a.horiz_rms}, {"horiz_max", a.horiz_max},
          {"long_rms", a.long_rms},     {"lat_rms", a.lat_rms},     {"pct_below_0_3m", 100.0 * a.below_30cm}};
}

inline nlohmann::json report_json(const EvaluationReport& r) {
  nlohmann::json j = aggregates_json(r.all);
  j["skipped"] = r.skipped;
  return j;
}

inline void save_epoch_errors(const std::string& path, const std::vector<EpochError>& errs) {
  CsvWriter w(path, {"t", "longitudinal", "lateral", "horizontal"});
  for (const auto& e : errs) w.row({e.t, e.longitudinal, e.lateral, e.horizontal});
}

}  // namespace fusionloc::eval
