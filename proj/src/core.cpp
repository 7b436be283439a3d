#include "ninjadoh/core.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

namespace ninjadoh::core {

namespace {

constexpr std::string_view kPathCharset = "abcdefghijklmnopqrstuvwxyz0123456789";
constexpr std::string_view kForbiddenPath = "/dns-query";

bool valid_path_chars(std::string_view body) {
  return std::all_of(body.begin(), body.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
  });
}

}  // namespace

IpAddress IpAddress::from_string(const std::string& dotted) {
  uint32_t parts[4];
  size_t pos = 0;
  for (int i = 0; i < 4; ++i) {
    if (pos >= dotted.size() || !isdigit(static_cast<unsigned char>(dotted[pos]))) {
      throw std::invalid_argument("bad IPv4 literal: " + dotted);
    }
    size_t end = pos;
    uint32_t v = 0;
    while (end < dotted.size() && isdigit(static_cast<unsigned char>(dotted[end]))) {
      v = v * 10 + static_cast<uint32_t>(dotted[end] - '0');
      if (v > 255 || end - pos >= 3) throw std::invalid_argument("bad IPv4 octet: " + dotted);
      ++end;
    }
    parts[i] = v;
    pos = end;
    if (i < 3) {
      if (pos >= dotted.size() || dotted[pos] != '.') {
        throw std::invalid_argument("bad IPv4 literal: " + dotted);
      }
      ++pos;
    }
  }
  if (pos != dotted.size()) throw std::invalid_argument("bad IPv4 literal: " + dotted);
  return from_uint32((parts[0] << 24) | (parts[1] << 16) | (parts[2] << 8) | parts[3]);
}

IpAddress IpAddress::from_uint32(uint32_t host_order) {
  if (host_order == 0) throw std::invalid_argument("0.0.0.0 is not a usable address");
  return IpAddress(host_order);
}

std::string IpAddress::to_string() const {
  return std::to_string((value_ >> 24) & 0xff) + "." + std::to_string((value_ >> 16) & 0xff) +
         "." + std::to_string((value_ >> 8) & 0xff) + "." + std::to_string(value_ & 0xff);
}

QueryPath QueryPath::from_string(std::string path) {
  if (path.size() < kMinChars + 1 || path.size() > kMaxChars + 1 || path[0] != '/' ||
      !valid_path_chars(std::string_view(path).substr(1))) {
    throw std::invalid_argument("query path must be '/' plus 16-64 chars of [a-z0-9]");
  }
  if (path == kForbiddenPath) throw std::invalid_argument("query path must not be /dns-query");
  return QueryPath(std::move(path));
}

QueryPath QueryPath::generate(std::mt19937_64& rng) {
  std::uniform_int_distribution<size_t> len_dist(kMinChars, kMaxChars);
  std::uniform_int_distribution<size_t> chr_dist(0, kPathCharset.size() - 1);
  for (;;) {
    std::string p = "/";
    const size_t len = len_dist(rng);
    for (size_t i = 0; i < len; ++i) p.push_back(kPathCharset[chr_dist(rng)]);
    if (p == kForbiddenPath) continue;  // unreachable with this charset, kept as a guard
    return QueryPath(std::move(p));
  }
}

RotationState::RotationState(std::vector<Lease> leases, double rotation_interval)
    : leases_(std::move(leases)), rotation_interval_(rotation_interval) {
  if (leases_.empty()) throw std::invalid_argument("rotation state needs at least one lease");
  if (rotation_interval_ <= 0) throw std::invalid_argument("rotation interval must be positive");
  std::set<IpAddress> addrs;
  std::set<int> ifaces;
  for (size_t i = 0; i < leases_.size(); ++i) {
    const Lease& l = leases_[i];
    if (l.interface.role != InterfaceRole::application) {
      throw std::invalid_argument("leases belong to application interfaces only");
    }
    if (!addrs.insert(l.address).second) throw std::invalid_argument("duplicate lease address");
    if (!ifaces.insert(l.interface.index).second) {
      throw std::invalid_argument("one active lease per application interface");
    }
    if (i > 0 && !(leases_[i - 1].assigned_at < l.assigned_at)) {
      throw std::invalid_argument("lease timestamps must be strictly ordered");
    }
  }
}

std::vector<IpAddress> RotationState::addresses() const {
  std::vector<IpAddress> out;
  out.reserve(leases_.size());
  for (const Lease& l : leases_) out.push_back(l.address);
  return out;
}

bool RotationState::holds(const IpAddress& a) const {
  return std::any_of(leases_.begin(), leases_.end(),
                     [&](const Lease& l) { return l.address == a; });
}

RotationOutcome rotation_step(const RotationState& state, IpAddress new_addr, double now) {
  if (state.empty()) throw std::invalid_argument("rotation_step on empty state");
  if (state.holds(new_addr)) {
    throw std::invalid_argument("rotation_step: address already live: " + new_addr.to_string());
  }
  if (!(now > state.newest().assigned_at)) {
    throw std::invalid_argument("rotation_step: timestamp must advance");
  }
  std::vector<Lease> next(state.leases().begin() + 1, state.leases().end());
  const Lease& oldest = state.oldest();
  next.push_back(Lease{new_addr, oldest.interface, now});
  return RotationOutcome{RotationState(std::move(next), state.rotation_interval()),
                         oldest.address};
}

ServiceRecord make_service_record(std::vector<IpAddress> ips, QueryPath path, int64_t timestamp) {
  if (ips.empty()) throw std::invalid_argument("service record needs at least one address");
  std::set<IpAddress> uniq(ips.begin(), ips.end());
  if (uniq.size() != ips.size()) throw std::invalid_argument("service record addresses must be distinct");
  return ServiceRecord{std::move(ips), std::move(path), timestamp};
}

std::string canonical_record_bytes(const ServiceRecord& record) {
  std::string out = "{\"ips\":[";
  for (size_t i = 0; i < record.ips.size(); ++i) {
    if (i) out.push_back(',');
    out.push_back('"');
    out += record.ips[i].to_string();
    out.push_back('"');
  }
  out += "],\"query_path\":\"";
  out += record.query_path.str();
  out += "\",\"timestamp\":";
  out += std::to_string(record.timestamp);
  out.push_back('}');
  return out;
}

ServiceRecord parse_record(const std::string& bytes) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("service record is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("ips") || !j.contains("query_path") ||
      !j.contains("timestamp") || j.size() != 3) {
    throw std::invalid_argument("service record must carry exactly ips, query_path, timestamp");
  }
  if (!j["ips"].is_array() || j["ips"].empty()) {
    throw std::invalid_argument("service record ips must be a non-empty array");
  }
  std::vector<IpAddress> ips;
  for (const auto& e : j["ips"]) {
    if (!e.is_string()) throw std::invalid_argument("service record ips must be strings");
    ips.push_back(IpAddress::from_string(e.get<std::string>()));
  }
  if (!j["timestamp"].is_number_integer()) {
    throw std::invalid_argument("service record timestamp must be an integer");
  }
  return make_service_record(std::move(ips),
                             QueryPath::from_string(j["query_path"].get<std::string>()),
                             j["timestamp"].get<int64_t>());
}

}  // namespace ninjadoh::core
