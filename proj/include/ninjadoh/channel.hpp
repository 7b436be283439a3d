#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ninjadoh/clock.hpp"

namespace ninjadoh::channel {

/// Content identifier: for the built-in store this is the lowercase hex of
/// the SHA-256 of the content; the HTTP profile passes the daemon's token
/// through opaquely.
class ContentId {
public:
  static ContentId from_bytes(std::string_view content);
  static ContentId from_token(std::string token);

  const std::string& token() const { return token_; }
  bool is_digest_form() const;

  auto operator<=>(const ContentId&) const = default;

private:
  explicit ContentId(std::string t) : token_(std::move(t)) {}
  std::string token_;
};

/// The pre-shared mutable-pointer name. Treated as a capability: logs only
/// ever see the redacted form.
class IpnsName {
public:
  explicit IpnsName(std::string name);
  const std::string& value() const { return name_; }
  std::string redacted() const;
  auto operator<=>(const IpnsName&) const = default;

private:
  std::string name_;
};

struct PointerRecord {
  IpnsName name;
  ContentId cid;
  double published_at = 0;
  double lifetime = 86400;
  double ttl = 10;

  /// Enforces the TTL discipline against the deployment's rotation interval.
  static PointerRecord make(IpnsName name, ContentId cid, double published_at, double lifetime,
                            double ttl, double rotation_interval);
};

struct ChannelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnknownCid : ChannelError {
  UnknownCid() : ChannelError("unknown content id") {}
};
struct IntegrityMismatch : ChannelError {
  IntegrityMismatch() : ChannelError("content does not hash to its id") {}
};
struct TransportError : ChannelError {
  using ChannelError::ChannelError;
};

/// Decentralized publication channel: content-addressed blobs plus a
/// mutable name pointer.
class NameChannel {
public:
  virtual ~NameChannel() = default;

  virtual ContentId publish_content(std::string_view bytes) = 0;
  virtual void update_pointer(const IpnsName& name, const ContentId& cid) = 0;
  virtual std::optional<ContentId> resolve_pointer(const IpnsName& name) = 0;
  virtual std::string fetch_content(const ContentId& cid) = 0;
};

/// In-process channel with a DHT-style propagation delay: a pointer update
/// becomes visible to resolvers `propagation_delay` seconds after publish,
/// last writer wins. Publishes are serialized; resolves read a snapshot.
class SimulatedChannel final : public NameChannel {
public:
  SimulatedChannel(const Clock& clock, double propagation_delay);

  ContentId publish_content(std::string_view bytes) override;
  void update_pointer(const IpnsName& name, const ContentId& cid) override;
  std::optional<ContentId> resolve_pointer(const IpnsName& name) override;
  std::string fetch_content(const ContentId& cid) override;

  /// Fault injection for availability tests: while severed, resolves return
  /// not-found and publishes are dropped (the server keeps running).
  void sever(bool severed);
  double propagation_delay() const { return delay_; }

  /// Test hook: corrupt a stored blob to exercise the integrity check.
  void tamper(const ContentId& cid, std::string bytes);

private:
  const Clock& clock_;
  double delay_;
  std::mutex mu_;
  bool severed_ = false;
  std::map<std::string, std::string> store_;
  std::map<std::string, std::vector<std::pair<double, ContentId>>> pointers_;
};

/// HTTP profile against a local IPFS daemon (POST /api/v0/...). Integration
/// only: daemon CIDs are treated as opaque tokens; integrity is verified
/// only when the id is digest-form.
class IpfsHttpChannel final : public NameChannel {
public:
  IpfsHttpChannel(std::string api_base_url, double lifetime = 86400, double ttl = 10,
                  double timeout_seconds = 10);
  ~IpfsHttpChannel() override;

  ContentId publish_content(std::string_view bytes) override;
  void update_pointer(const IpnsName& name, const ContentId& cid) override;
  std::optional<ContentId> resolve_pointer(const IpnsName& name) override;
  std::string fetch_content(const ContentId& cid) override;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ninjadoh::channel
