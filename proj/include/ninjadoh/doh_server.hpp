#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ninjadoh/certs.hpp"
#include "ninjadoh/channel.hpp"
#include "ninjadoh/clock.hpp"
#include "ninjadoh/core.hpp"
#include "ninjadoh/provider.hpp"

namespace ninjadoh::server {

struct ServerConfig {
  int app_interface_count = 2;  // K
  double rotation_interval = 60.0;
  std::optional<std::pair<double, double>> rotation_range;  // overrides the fixed interval

  std::string bind_address = "0.0.0.0";
  uint16_t listen_port = 0;  // 0 = pick a free port (unprivileged test runs)

  std::optional<std::string> management_bind;  // health/debug only, never DoH
  uint16_t management_port = 0;

  std::map<std::string, core::IpAddress> static_zone;  // seeded names for loopback tests
  uint32_t zone_ttl = 60;
  std::vector<std::string> upstream_urls;  // real DoH egress, config-gated
  bool enable_upstream_egress = false;

  double pointer_lifetime = 86400.0;
  double pointer_ttl = 10.0;
  bool strict_publish_verify = false;
  bool fresh_leaf_key_per_rotation = false;

  size_t max_dns_payload = 4096;
  double publish_retry_backoff = 0.5;  // seconds, protocol time
  int publish_retries = 3;
  int allocate_retries = 3;
};

/// One in-process upstream resolver; tests stub these, the CLI wires real
/// DoH egress behind the same signature.
struct Upstream {
  std::string name;
  std::function<std::optional<std::string>(std::string_view)> query;
};

/// The TLS endpoint: path-gated RFC 8484 on every live address, generic 404
/// elsewhere, resolution from the seeded zone or random-order upstreams.
/// Credentials and the accepted path set swap atomically per rotation.
class DohService {
public:
  explicit DohService(ServerConfig config);
  ~DohService();

  void start(const certs::ServerCertificate& initial_cert,
             std::vector<core::QueryPath> initial_paths,
             std::vector<core::IpAddress> live_ips);
  void stop();

  /// Rejects (returns false) unless the certificate's SAN set equals the
  /// given live address set; old credentials stay in place on rejection.
  bool swap_live_credentials(const certs::ServerCertificate& cert,
                             std::vector<core::QueryPath> paths,
                             std::vector<core::IpAddress> live_ips);

  void set_upstreams(std::vector<Upstream> upstreams, uint64_t seed);

  /// Zone/upstream resolution for one wire-format query, exposed for tests.
  std::string resolve_query(std::string_view dns_query);

  uint16_t port() const;
  uint64_t queries_answered() const;
  std::vector<core::QueryPath> active_paths() const;

  void set_status_provider(std::function<std::string()> provider);

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct IterationLog {
  uint64_t iteration = 0;
  std::string new_ip;
  std::string released_ip;
  std::string cid;
  size_t path_len = 0;
  double duration_ms = 0;
  std::string json() const;
};

/// The rotation daemon: allocate -> rotate -> release -> re-certify ->
/// re-path -> publish, every interval. Publication happens only after the
/// certificate covering the new address is live.
class RotationDaemon {
public:
  RotationDaemon(ServerConfig config, provider::AddressProvider& provider,
                 channel::NameChannel& channel, channel::IpnsName name, certs::CaBundle ca,
                 const Clock& clock, uint64_t seed);
  ~RotationDaemon();

  /// Assign the initial K addresses, issue the first certificate and path,
  /// start the endpoint, publish the first record.
  void init();

  /// One rotation iteration; scripted tests drive this directly.
  void step();

  /// init() + step every rotation interval until `stop`.
  void run(std::atomic<bool>& stop);

  core::RotationState state() const;
  const certs::CaBundle& ca() const { return ca_; }
  DohService& service() { return *service_; }
  std::vector<IterationLog> history() const;
  core::ServiceRecord current_record() const;

  void set_log_sink(std::function<void(const std::string&)> sink);

private:
  void publish_current(double iteration_started_at, std::string released_ip);

  ServerConfig config_;
  provider::AddressProvider& provider_;
  channel::NameChannel& channel_;
  channel::IpnsName ipns_name_;
  certs::CaBundle ca_;
  const Clock& clock_;
  std::mt19937_64 rng_;

  mutable std::mutex mu_;
  core::RotationState state_;
  std::deque<core::QueryPath> paths_;  // one per live lease generation, newest last
  certs::PkeyPtr leaf_key_;
  uint64_t iteration_ = 0;
  std::vector<IterationLog> history_;
  std::optional<core::ServiceRecord> last_record_;

  std::unique_ptr<DohService> service_;
  std::function<void(const std::string&)> log_sink_;
};

}  // namespace ninjadoh::server
