#include "ninjadoh/provider.hpp"

#include <algorithm>

namespace ninjadoh::provider {

namespace {

// "a.b.c.d/len" -> (network address host-order, host capacity excluding
// network/broadcast)
std::pair<uint32_t, size_t> parse_cidr(const std::string& block) {
  const auto slash = block.find('/');
  if (slash == std::string::npos) throw std::invalid_argument("CIDR needs a /prefix");
  const uint32_t base = core::IpAddress::from_string(block.substr(0, slash)).value();
  const int len = std::stoi(block.substr(slash + 1));
  if (len < 1 || len > 30) throw std::invalid_argument("CIDR prefix out of range");
  const uint32_t mask = len == 0 ? 0 : ~uint32_t(0) << (32 - len);
  const size_t hosts = (size_t(1) << (32 - len)) - 2;
  return {base & mask, hosts};
}

}  // namespace

SimulatedProvider::SimulatedProvider(ProviderConfig config, uint64_t seed, const Clock* clock)
    : config_(std::move(config)), clock_(clock), rng_(seed) {
  const auto [network, capacity] = parse_cidr(config_.address_block);
  if (config_.pool_size == 0 || config_.pool_size > capacity) {
    throw std::invalid_argument("pool_size must fit inside the address block");
  }
  for (size_t i = 1; i <= config_.pool_size; ++i) {
    free_.push_back(core::IpAddress::from_uint32(network + static_cast<uint32_t>(i)));
  }
}

core::IpAddress SimulatedProvider::allocate() {
  std::unique_lock<std::mutex> lock(mu_);
  if (free_.empty()) throw PoolExhausted();
  size_t idx = 0;
  if (config_.reuse_policy == ReusePolicy::uniform_random_free) {
    idx = std::uniform_int_distribution<size_t>(0, free_.size() - 1)(rng_);
  }
  const core::IpAddress addr = free_[idx];
  free_.erase(free_.begin() + static_cast<ptrdiff_t>(idx));
  unassigned_.insert(addr);
  if (clock_ && config_.allocation_latency > 0) {
    lock.unlock();
    clock_->sleep_for(config_.allocation_latency);
  }
  return addr;
}

void SimulatedProvider::assign(const core::IpAddress& addr, const core::InterfaceId& iface) {
  std::lock_guard<std::mutex> lock(mu_);
  if (iface.role != core::InterfaceRole::application) {
    throw std::invalid_argument("cannot assign addresses to the management interface");
  }
  if (!unassigned_.count(addr)) {
    throw std::invalid_argument("assign: address not allocated or already assigned: " +
                                addr.to_string());
  }
  if (auto it = assigned_.find(iface); it != assigned_.end()) {
    unassigned_.insert(it->second);  // displaced address awaits release
    assigned_.erase(it);
  }
  unassigned_.erase(addr);
  assigned_.emplace(iface, addr);
}

void SimulatedProvider::release(const core::IpAddress& addr) {
  std::lock_guard<std::mutex> lock(mu_);
  for (const auto& [iface, a] : assigned_) {
    if (a == addr) {
      throw std::invalid_argument("release: address still assigned to interface " +
                                  std::to_string(iface.index));
    }
  }
  if (!unassigned_.erase(addr)) {
    throw std::invalid_argument("release: address was never allocated: " + addr.to_string());
  }
  free_.push_back(addr);
}

PoolSnapshot SimulatedProvider::snapshot() const {
  std::lock_guard<std::mutex> lock(mu_);
  PoolSnapshot snap;
  snap.free.insert(free_.begin(), free_.end());
  snap.assigned = assigned_;
  return snap;
}

}  // namespace ninjadoh::provider
