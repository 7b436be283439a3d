#pragma once

#include <deque>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ninjadoh/clock.hpp"
#include "ninjadoh/core.hpp"

namespace ninjadoh::provider {

enum class ReusePolicy { uniform_random_free, lru_free };

struct ProviderConfig {
  size_t pool_size = 16;
  std::string address_block = "198.18.0.0/15";  // synthetic/test space
  double allocation_latency = 0.0;              // seconds
  ReusePolicy reuse_policy = ReusePolicy::uniform_random_free;
};

struct PoolSnapshot {
  std::set<core::IpAddress> free;
  std::map<core::InterfaceId, core::IpAddress> assigned;
};

struct PoolExhausted : std::runtime_error {
  PoolExhausted() : std::runtime_error("address pool exhausted") {}
};

/// Cloud address pool and interface assignment, behind one interface so a
/// real-cloud implementation can slot in. Mutating calls are serialized
/// internally; snapshots are immutable copies.
class AddressProvider {
public:
  virtual ~AddressProvider() = default;

  /// Take an address out of the free pool. Throws PoolExhausted.
  virtual core::IpAddress allocate() = 0;

  /// Bind an allocated, unassigned address to an application interface.
  /// An address the interface previously held becomes disassociated
  /// (unassigned but not yet free).
  virtual void assign(const core::IpAddress& addr, const core::InterfaceId& iface) = 0;

  /// Return a disassociated address to the free pool.
  virtual void release(const core::IpAddress& addr) = 0;

  virtual PoolSnapshot snapshot() const = 0;
};

/// Deterministic in-memory pool for desk-scale runs. Addresses are drawn
/// from a configurable CIDR; the free-list policy models either the cloud's
/// unpredictable reuse (uniform over free) or least-recently-released reuse.
class SimulatedProvider final : public AddressProvider {
public:
  SimulatedProvider(ProviderConfig config, uint64_t seed, const Clock* clock = nullptr);

  core::IpAddress allocate() override;
  void assign(const core::IpAddress& addr, const core::InterfaceId& iface) override;
  void release(const core::IpAddress& addr) override;
  PoolSnapshot snapshot() const override;

  size_t pool_size() const { return config_.pool_size; }

private:
  ProviderConfig config_;
  const Clock* clock_;
  mutable std::mutex mu_;
  std::mt19937_64 rng_;
  std::deque<core::IpAddress> free_;  // front = least recently released
  std::set<core::IpAddress> unassigned_;  // allocated or disassociated
  std::map<core::InterfaceId, core::IpAddress> assigned_;
};

}  // namespace ninjadoh::provider
