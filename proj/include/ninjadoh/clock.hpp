#pragma once

#include <atomic>
#include <chrono>

namespace ninjadoh {

/// Protocol-time source. Rotation cadence, client polling, channel
/// propagation, and record timestamps all read this clock so the full stack
/// can run against accelerated time in tests. Units are seconds since the
/// Unix epoch.
class Clock {
public:
  virtual ~Clock() = default;

  virtual double now() const = 0;

  /// Sleep for a protocol-time duration, waking early when `stop` becomes
  /// true. Returns false if interrupted.
  virtual bool sleep_for(double seconds, const std::atomic<bool>& stop) const = 0;

  bool sleep_for(double seconds) const {
    static const std::atomic<bool> never{false};
    return sleep_for(seconds, never);
  }
};

class SystemClock final : public Clock {
public:
  double now() const override;
  bool sleep_for(double seconds, const std::atomic<bool>& stop) const override;
};

/// Real time scaled by a constant factor: one wall-clock second advances
/// protocol time by `scale` seconds. sleep_for(s) blocks for s/scale of
/// real time.
class ScaledClock final : public Clock {
public:
  explicit ScaledClock(double scale, double epoch_origin = 0.0);
  double now() const override;
  bool sleep_for(double seconds, const std::atomic<bool>& stop) const override;
  double scale() const { return scale_; }

private:
  double scale_;
  double origin_epoch_;
  std::chrono::steady_clock::time_point origin_real_;
};

/// Manually stepped clock for single-threaded deterministic tests;
/// sleep_for advances time instantly.
class ManualClock final : public Clock {
public:
  explicit ManualClock(double start = 0.0) : now_(start) {}
  double now() const override { return now_.load(); }
  bool sleep_for(double seconds, const std::atomic<bool>& stop) const override {
    now_ = now_.load() + seconds;
    return !stop.load();
  }
  void advance(double seconds) { now_ = now_.load() + seconds; }
  void set(double t) { now_ = t; }

private:
  mutable std::atomic<double> now_;
};

}  // namespace ninjadoh
