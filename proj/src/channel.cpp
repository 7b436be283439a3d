#include "ninjadoh/channel.hpp"

#include <algorithm>

#include "ninjadoh/hash.hpp"

namespace ninjadoh::channel {

ContentId ContentId::from_bytes(std::string_view content) {
  return ContentId(sha256_hex(content));
}

ContentId ContentId::from_token(std::string token) {
  if (token.empty()) throw std::invalid_argument("content id token must be non-empty");
  return ContentId(std::move(token));
}

bool ContentId::is_digest_form() const {
  return token_.size() == 64 && std::all_of(token_.begin(), token_.end(), [](char c) {
           return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
         });
}

IpnsName::IpnsName(std::string name) : name_(std::move(name)) {
  if (name_.empty()) throw std::invalid_argument("IPNS name must be non-empty");
}

std::string IpnsName::redacted() const {
  if (name_.size() <= 4) return "****";
  return name_.substr(0, 4) + "…";
}

PointerRecord PointerRecord::make(IpnsName name, ContentId cid, double published_at,
                                  double lifetime, double ttl, double rotation_interval) {
  if (ttl > rotation_interval) {
    throw std::invalid_argument("pointer ttl must not exceed the rotation interval");
  }
  if (lifetime < rotation_interval) {
    throw std::invalid_argument("pointer lifetime must cover the rotation interval");
  }
  return PointerRecord{std::move(name), std::move(cid), published_at, lifetime, ttl};
}

SimulatedChannel::SimulatedChannel(const Clock& clock, double propagation_delay)
    : clock_(clock), delay_(propagation_delay) {
  if (delay_ < 0) throw std::invalid_argument("propagation delay must be >= 0");
}

ContentId SimulatedChannel::publish_content(std::string_view bytes) {
  if (bytes.empty()) throw std::invalid_argument("cannot publish empty content");
  ContentId cid = ContentId::from_bytes(bytes);
  std::lock_guard<std::mutex> lock(mu_);
  if (severed_) throw TransportError("channel unreachable");
  store_.emplace(cid.token(), std::string(bytes));
  return cid;
}

void SimulatedChannel::update_pointer(const IpnsName& name, const ContentId& cid) {
  std::lock_guard<std::mutex> lock(mu_);
  if (severed_) throw TransportError("channel unreachable");
  if (!store_.count(cid.token())) throw UnknownCid();
  pointers_[name.value()].emplace_back(clock_.now(), cid);
}

std::optional<ContentId> SimulatedChannel::resolve_pointer(const IpnsName& name) {
  std::lock_guard<std::mutex> lock(mu_);
  if (severed_) return std::nullopt;
  auto it = pointers_.find(name.value());
  if (it == pointers_.end()) return std::nullopt;
  const double now = clock_.now();
  // Publishes are time-ordered, so the last visible entry is the newest.
  const auto& history = it->second;
  for (auto rit = history.rbegin(); rit != history.rend(); ++rit) {
    if (rit->first + delay_ <= now) return rit->second;
  }
  return std::nullopt;
}

std::string SimulatedChannel::fetch_content(const ContentId& cid) {
  std::lock_guard<std::mutex> lock(mu_);
  if (severed_) throw TransportError("channel unreachable");
  auto it = store_.find(cid.token());
  if (it == store_.end()) throw UnknownCid();
  if (ContentId::from_bytes(it->second) != cid) throw IntegrityMismatch();
  return it->second;
}

void SimulatedChannel::sever(bool severed) {
  std::lock_guard<std::mutex> lock(mu_);
  severed_ = severed;
}

void SimulatedChannel::tamper(const ContentId& cid, std::string bytes) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = store_.find(cid.token());
  if (it == store_.end()) throw UnknownCid();
  it->second = std::move(bytes);
}

}  // namespace ninjadoh::channel
