#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "ninjadoh/certs.hpp"
#include "ninjadoh/channel.hpp"
#include "ninjadoh/clock.hpp"
#include "ninjadoh/core.hpp"
#include "ninjadoh/doh_transport.hpp"

namespace ninjadoh::client {

constexpr uint8_t kDohStampProtocol = 0x02;

/// Decoded form of an sdns:// DoH stamp.
struct StampData {
  uint8_t protocol = kDohStampProtocol;
  uint64_t properties = 0;
  std::string address;  // "ip:port"
  std::vector<std::vector<uint8_t>> hashes;
  std::string hostname;  // the IP literal; the protocol has no domain
  std::string path;

  bool operator==(const StampData&) const = default;

  /// Protocol invariants: DoH marker, exactly one 32-byte hash, valid path.
  void validate() const;
};

struct StampError : std::runtime_error {
  enum class Kind { unsupported_protocol, malformed, oversized_field };
  StampError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
  Kind kind;
};

std::string encode_stamp(const StampData& data);
StampData decode_stamp(const std::string& sdns);

/// Stamp for the newest address of a record, pinning the CA root digest.
StampData make_stamp(const core::ServiceRecord& record, uint16_t port,
                     const std::array<uint8_t, 32>& ca_digest);

enum class ClientState { following, stale, fail_closed };
const char* to_string(ClientState s);

struct ClientStatus {
  ClientState state = ClientState::stale;
  std::optional<core::IpAddress> current_ip;
  double last_update_at = 0;
  std::optional<double> last_probe_latency_ms;
  int consecutive_probe_failures = 0;
};

/// One status line per update tick, as line-oriented JSON.
std::string status_json_line(const ClientStatus& status);

struct ClientConfig {
  channel::IpnsName ipns_name{"unset"};
  std::string ca_root_path;
  double update_interval = 5.0;
  double rotation_interval = 60.0;  // staleness threshold is twice this
  std::string local_listen_ip = "127.0.0.1";
  uint16_t local_listen_port = 0;  // 0 = pick a free port
  std::string probe_name = "probe.test";
  uint16_t server_port = 443;
  int probe_failure_threshold = 3;
  double query_timeout = 2.0;
  std::string proxy_fragment_path;  // optional dnscrypt-proxy style fragment
  std::string proxy_server_name = "ninjadoh";
};

struct ProbeResult {
  bool ok = false;
  double latency_ms = 0;
  TransportErrorKind reason = TransportErrorKind::connect;
};

/// SERVFAIL for a local query, echoing its id and question when parseable.
/// The fail-closed state answers everything with this and nothing leaves
/// the host.
std::string fail_closed_answer(std::string_view query_bytes);

/// Local fail-closed DNS-to-DoH forwarder: plain DNS on loopback in, DoH
/// upstream out. All upstream egress goes through DohTransport; in the
/// fail-closed state every local query gets SERVFAIL and no upstream socket
/// is touched.
class Forwarder {
public:
  Forwarder(std::string listen_ip, uint16_t listen_port, certs::StorePtr trust,
            double query_timeout = 2.0);
  ~Forwarder();

  void start();  // UDP + TCP listeners
  void stop();

  /// Retarget the upstream. Returns false when the stamp equals the current
  /// one (no reload). In-flight queries finish against the old target.
  bool apply(const StampData& stamp, std::vector<core::IpAddress> fallback_ips);

  void set_fail_closed(bool fail_closed);
  bool fail_closed() const;

  /// One local query, synchronously; listeners call this per datagram.
  std::string handle_query(std::string_view query_bytes);

  ProbeResult probe(const std::string& probe_name, std::mt19937_64& rng);

  uint16_t port() const;
  const std::optional<StampData>& current_stamp() const;
  uint64_t upstream_failures() const;

private:
  struct Target;
  std::shared_ptr<Target> snapshot() const;

  std::string listen_ip_;
  uint16_t listen_port_;
  certs::StorePtr trust_;
  double timeout_;

  mutable std::mutex mu_;
  std::optional<StampData> stamp_;
  std::shared_ptr<Target> target_;
  std::atomic<bool> fail_closed_{true};  // closed until the first record applies
  std::atomic<uint64_t> upstream_failures_{0};

  struct Listeners;
  std::unique_ptr<Listeners> listeners_;
};

/// The tracking daemon: resolve pointer, fetch record, retarget forwarder,
/// probe, report. Fails closed when the channel goes dark for longer than
/// twice the rotation interval.
class ClientDaemon {
public:
  ClientDaemon(ClientConfig config, channel::NameChannel& channel, const Clock& clock,
               uint64_t seed, std::ostream* status_out = nullptr);
  ~ClientDaemon();

  void start();  // starts the forwarder listeners
  void tick();   // one update iteration
  void run(std::atomic<bool>& stop);

  ClientStatus status() const;
  Forwarder& forwarder() { return *forwarder_; }

private:
  void write_proxy_fragment(const StampData& stamp) const;
  void update_state(bool record_fresh_this_tick, bool probed, const ProbeResult& probe);

  ClientConfig config_;
  channel::NameChannel& channel_;
  const Clock& clock_;
  std::mt19937_64 rng_;
  std::ostream* status_out_;

  mutable std::mutex mu_;
  ClientStatus status_;
  std::optional<core::IpAddress> last_known_ip_;
  double last_good_record_at_ = -1;  // protocol time of last validated record
  std::array<uint8_t, 32> ca_digest_{};

  std::unique_ptr<Forwarder> forwarder_;
};

}  // namespace ninjadoh::client
