#pragma once

#include "fusionloc/eskf/filter.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fusionloc::eskf {

struct MeasurementLogEntry {
  double t_occurred = 0.0;
  double t_received = 0.0;
  MeasurementKind kind = MeasurementKind::lidar;
  std::uint64_t seq = 0;
  std::string status;  // accepted | gated | failed | dropped
  double nis = 0.0;
  int replay_depth = 0;  // IMU slots re-propagated when it arrived
};

struct TrajectoryRecord {
  NavState nav;
  Mat15 P;
};

/// Real-time filter plus a fixed-length history buffer for delayed and
/// out-of-order measurements.
///
/// Every IMU sample opens a slot holding the propagated state before and
/// after the measurements assigned to it. A measurement belongs to the slot
/// with the latest time not after its occurrence time; within a slot
/// measurements are applied in canonical order. A late measurement triggers a
/// rewind to its slot and a re-propagation through the buffered IMU samples
/// (picking up every other buffered measurement on the way), after which the
/// history from that slot forward is replaced. Because the result depends only
/// on which measurements sit in which slot, any arrival order gives the same
/// final state as chronological processing.
class DelayedFusion {
 public:
  DelayedFusion(const FilterConfig& cfg, const ErrorStateFilter& init, double horizon_s = 2.0)
      : cfg_(cfg), horizon_(horizon_s) {
    Slot s;
    s.t = init.nav.t;
    s.prior = s.post = init;
    slots_.push_back(std::move(s));
  }

  const FilterConfig& config() const { return cfg_; }
  const ErrorStateFilter& current() const { return slots_.back().post; }
  double time() const { return slots_.back().t; }
  double oldest_time() const { return slots_.front().t; }
  std::size_t buffered_slots() const { return slots_.size(); }

  void push_imu(const sins::ImuSample& sample) {
    const double dt = sample.t - slots_.back().t;
    if (!(dt > 0.0)) fail(ErrorKind::input, "IMU timestamps must increase");
    Slot s;
    s.t = sample.t;
    s.imu = sample;
    s.dt = dt;
    s.prior = slots_.back().post;
    time_update(s.prior, sample, dt, cfg_);
    s.post = s.prior;
    slots_.push_back(std::move(s));

    // Measurements that were waiting for this sample.
    std::vector<TimedMeasurement> ready;
    auto it = std::partition(pending_.begin(), pending_.end(),
                             [&](const TimedMeasurement& m) { return m.t_occurred > sample.t; });
    ready.assign(it, pending_.end());
    pending_.erase(it, pending_.end());
    if (!ready.empty()) {
      std::size_t first = slots_.size();
      for (auto& m : ready) first = std::min(first, insert(std::move(m)));
      replay_from(first);
    }
    trim();
  }

  void push_measurement(TimedMeasurement m) {
    if (m.t_received < m.t_occurred) fail(ErrorKind::input, "measurement received before it occurred");
    if (m.t_occurred < slots_.front().t) {
      MeasurementLogEntry e = entry_for(m);
      e.status = "dropped";
      log_[m.seq] = e;
      ++dropped_;
      return;
    }
    if (m.t_occurred > slots_.back().t) {
      pending_.push_back(std::move(m));
      return;
    }
    const std::size_t k = insert(std::move(m));
    replay_from(k);
  }

  /// Post-update state of the latest slot not after t.
  std::optional<ErrorStateFilter> state_at(double t) const {
    const std::size_t k = slot_for(t);
    if (k == npos) return std::nullopt;
    return slots_[k].post;
  }

  /// Slots that left the buffer; their states are final.
  std::vector<TrajectoryRecord> take_finalized() {
    std::vector<TrajectoryRecord> out;
    out.swap(finalized_);
    return out;
  }

  /// Finalizes every buffered slot (end of stream).
  std::vector<TrajectoryRecord> flush() {
    for (const Slot& s : slots_) finalized_.push_back({s.post.nav, s.post.P});
    Slot last = slots_.back();
    slots_.clear();
    slots_.push_back(std::move(last));
    std::vector<TrajectoryRecord> out;
    out.swap(finalized_);
    return out;
  }

  std::vector<MeasurementLogEntry> log() const {
    std::vector<MeasurementLogEntry> out;
    out.reserve(log_.size());
    for (const auto& [seq, e] : log_) out.push_back(e);
    return out;
  }
  std::size_t dropped() const { return dropped_; }

 private:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  struct Slot {
    double t = 0.0;
    double dt = 0.0;
    sins::ImuSample imu;
    ErrorStateFilter prior;
    ErrorStateFilter post;
    std::vector<TimedMeasurement> meas;
  };

  std::size_t slot_for(double t) const {
    auto it = std::upper_bound(slots_.begin(), slots_.end(), t, [](double v, const Slot& s) { return v < s.t; });
    if (it == slots_.begin()) return npos;
    return static_cast<std::size_t>(std::distance(slots_.begin(), it)) - 1;
  }

  std::size_t insert(TimedMeasurement m) {
    const std::size_t k = slot_for(m.t_occurred);
    auto& v = slots_[k].meas;
    v.insert(std::upper_bound(v.begin(), v.end(), m, canonical_less), std::move(m));
    last_replay_depth_ = static_cast<int>(slots_.size() - 1 - k);
    return k;
  }

  MeasurementLogEntry entry_for(const TimedMeasurement& m) const {
    MeasurementLogEntry e;
    e.t_occurred = m.t_occurred;
    e.t_received = m.t_received;
    e.kind = m.kind();
    e.seq = m.seq;
    return e;
  }

  void apply_slot(Slot& s) {
    s.post = s.prior;
    for (const TimedMeasurement& m : s.meas) {
      MeasurementLogEntry e = entry_for(m);
      auto old = log_.find(m.seq);
      e.replay_depth = old != log_.end() ? old->second.replay_depth : last_replay_depth_;
      try {
        const UpdateResult r = apply_measurement(s.post, m, cfg_, m.t_occurred - s.t);
        e.nis = r.nis;
        e.status = r.accepted ? "accepted" : "gated";
      } catch (const Error& err) {
        if (err.kind() != ErrorKind::numerical) throw;
        e.status = "failed";
      }
      log_[m.seq] = e;
    }
  }

  void replay_from(std::size_t k) {
    apply_slot(slots_[k]);
    for (std::size_t j = k + 1; j < slots_.size(); ++j) {
      Slot& s = slots_[j];
      s.prior = slots_[j - 1].post;
      time_update(s.prior, s.imu, s.dt, cfg_);
      apply_slot(s);
    }
  }

  void trim() {
    const double keep_from = slots_.back().t - horizon_;
    while (slots_.size() > 1 && slots_[1].t <= keep_from) {
      finalized_.push_back({slots_.front().post.nav, slots_.front().post.P});
      slots_.pop_front();
    }
  }

  FilterConfig cfg_;
  double horizon_;
  std::deque<Slot> slots_;
  std::vector<TimedMeasurement> pending_;
  std::vector<TrajectoryRecord> finalized_;
  std::map<std::uint64_t, MeasurementLogEntry> log_;
  std::size_t dropped_ = 0;
  int last_replay_depth_ = 0;
};

}  // namespace fusionloc::eskf
