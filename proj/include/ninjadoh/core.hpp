#pragma once

#include <compare>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ninjadoh::core {

/// IPv4 address value type. 0.0.0.0 is never a valid value.
class IpAddress {
public:
  static IpAddress from_string(const std::string& dotted);
  static IpAddress from_uint32(uint32_t host_order);

  std::string to_string() const;
  uint32_t value() const { return value_; }

  auto operator<=>(const IpAddress&) const = default;

private:
  explicit IpAddress(uint32_t v) : value_(v) {}
  uint32_t value_;
};

enum class InterfaceRole { management, application };

struct InterfaceId {
  int index = 0;
  InterfaceRole role = InterfaceRole::application;
  auto operator<=>(const InterfaceId&) const = default;
};

/// One interface's current address and when it was assigned.
struct Lease {
  IpAddress address;
  InterfaceId interface;
  double assigned_at = 0.0;  // seconds, monotonic within a run
};

/// Randomized DoH query path: "/" plus 16-64 chars of [a-z0-9],
/// never the well-known "/dns-query".
class QueryPath {
public:
  static QueryPath from_string(std::string path);
  static QueryPath generate(std::mt19937_64& rng);

  const std::string& str() const { return path_; }
  bool operator==(const QueryPath&) const = default;

  static constexpr size_t kMinChars = 16;
  static constexpr size_t kMaxChars = 64;

private:
  explicit QueryPath(std::string p) : path_(std::move(p)) {}
  std::string path_;
};

/// The IP "ladder": one live lease per application interface, oldest first.
/// Immutable after construction; rotation produces a new state.
class RotationState {
public:
  RotationState() = default;
  RotationState(std::vector<Lease> leases, double rotation_interval);

  const std::vector<Lease>& leases() const { return leases_; }
  double rotation_interval() const { return rotation_interval_; }
  size_t size() const { return leases_.size(); }
  bool empty() const { return leases_.empty(); }

  /// Live addresses, oldest first (equivalently: newest last).
  std::vector<IpAddress> addresses() const;
  bool holds(const IpAddress& a) const;
  const Lease& oldest() const { return leases_.front(); }
  const Lease& newest() const { return leases_.back(); }

private:
  std::vector<Lease> leases_;
  double rotation_interval_ = 60.0;
};

struct RotationOutcome {
  RotationState state;
  IpAddress released;
};

/// Replace the oldest lease's address with `new_addr` assigned at `now`;
/// the displaced address is returned for release back to the pool.
RotationOutcome rotation_step(const RotationState& state, IpAddress new_addr, double now);

/// The published coordinates: current IP set (newest last), query path,
/// and a Unix-seconds timestamp.
struct ServiceRecord {
  std::vector<IpAddress> ips;
  QueryPath query_path;
  int64_t timestamp = 0;

  const IpAddress& newest_ip() const { return ips.back(); }
  bool operator==(const ServiceRecord&) const = default;
};

ServiceRecord make_service_record(std::vector<IpAddress> ips, QueryPath path, int64_t timestamp);

/// Deterministic wire form: {"ips":[...],"query_path":"...","timestamp":N}
/// with exactly that key order and no insignificant whitespace.
std::string canonical_record_bytes(const ServiceRecord& record);

/// Inverse of canonical_record_bytes; accepts any JSON whitespace but
/// enforces the record invariants. Throws std::invalid_argument.
ServiceRecord parse_record(const std::string& bytes);

}  // namespace ninjadoh::core
