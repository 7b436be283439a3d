#include "ninjadoh/client.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <fstream>
#include <map>
#include <thread>

#include <json.hpp>

#include "ninjadoh/dns_message.hpp"

namespace ninjadoh::client {

namespace {

std::pair<core::IpAddress, uint16_t> split_address(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("address needs ip:port: " + addr);
  return {core::IpAddress::from_string(addr.substr(0, colon)),
          static_cast<uint16_t>(std::stoul(addr.substr(colon + 1)))};
}

int bind_socket(int type, const std::string& ip, uint16_t port) {
  const int fd = ::socket(AF_INET, type, 0);
  if (fd < 0) throw std::runtime_error("socket() failed");
  int one = 1;
  setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (inet_pton(AF_INET, ip.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw std::runtime_error("bad listen address " + ip);
  }
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    return -1;
  }
  return fd;
}

uint16_t bound_port(int fd) {
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  return ntohs(addr.sin_port);
}

}  // namespace

const char* to_string(ClientState s) {
  switch (s) {
    case ClientState::following: return "following";
    case ClientState::stale: return "stale";
    case ClientState::fail_closed: return "fail_closed";
  }
  return "unknown";
}

std::string status_json_line(const ClientStatus& status) {
  nlohmann::ordered_json j;
  j["state"] = to_string(status.state);
  j["current_ip"] = status.current_ip ? status.current_ip->to_string() : nullptr;
  j["last_update_at"] = status.last_update_at;
  if (status.last_probe_latency_ms) {
    j["last_probe_latency_ms"] = *status.last_probe_latency_ms;
  } else {
    j["last_probe_latency_ms"] = nullptr;
  }
  j["consecutive_probe_failures"] = status.consecutive_probe_failures;
  return j.dump();
}

std::string fail_closed_answer(std::string_view query_bytes) {
  const auto parsed = dns::parse(query_bytes);
  if (parsed && !parsed->questions.empty()) {
    return dns::build_rcode_response(parsed->id, parsed->questions.front(),
                                     dns::Rcode::servfail);
  }
  uint16_t id = 0;
  if (query_bytes.size() >= 2) {
    id = static_cast<uint16_t>((static_cast<uint8_t>(query_bytes[0]) << 8) |
                               static_cast<uint8_t>(query_bytes[1]));
  }
  return dns::build_rcode_response(id, std::nullopt, dns::Rcode::servfail);
}

// ---------------------------------------------------------------------------
// Forwarder

struct Forwarder::Target {
  StampData stamp;
  std::vector<core::IpAddress> candidates;  // newest first
  uint16_t port = 443;
  X509_STORE* trust = nullptr;
  double timeout = 2.0;

  std::mutex io_mu;  // transports are serialized per target
  std::map<uint32_t, std::unique_ptr<DohTransport>> transports;

  struct Outcome {
    std::optional<std::string> answer;
    TransportErrorKind reason = TransportErrorKind::connect;
  };

  /// Try the newest address first, then the older rungs of the ladder.
  Outcome forward(std::string_view query) {
    std::lock_guard<std::mutex> lock(io_mu);
    Outcome out;
    for (const auto& ip : candidates) {
      auto& transport = transports[ip.value()];
      if (!transport) transport = std::make_unique<DohTransport>(ip, port, trust, timeout);
      try {
        HttpResponse resp = transport->post(stamp.path, query);
        if (resp.status == 200 &&
            resp.content_type.rfind("application/dns-message", 0) == 0) {
          out.answer = std::move(resp.body);
          return out;
        }
        out.reason = TransportErrorKind::http;
      } catch (const TransportError& e) {
        transport.reset();
        out.reason = e.kind;
      }
    }
    return out;
  }
};

struct Forwarder::Listeners {
  int udp_fd = -1;
  int tcp_fd = -1;
  uint16_t port = 0;
  std::atomic<bool> stop{false};
  std::thread udp_thread;
  std::thread tcp_thread;

  // small pool so a slow upstream cannot head-of-line block the listener
  std::mutex queue_mu;
  std::condition_variable queue_cv;
  std::deque<std::pair<std::string, sockaddr_in>> queue;
  std::vector<std::thread> workers;
};

Forwarder::Forwarder(std::string listen_ip, uint16_t listen_port, certs::StorePtr trust,
                     double query_timeout)
    : listen_ip_(std::move(listen_ip)),
      listen_port_(listen_port),
      trust_(std::move(trust)),
      timeout_(query_timeout) {}

Forwarder::~Forwarder() { stop(); }

void Forwarder::start() {
  if (listeners_) return;
  auto l = std::make_unique<Listeners>();

  // UDP and TCP share one port number; with an ephemeral request the pair
  // may collide, so retry on a fresh port.
  for (int attempt = 0; attempt < 16; ++attempt) {
    l->udp_fd = bind_socket(SOCK_DGRAM, listen_ip_, listen_port_);
    if (l->udp_fd < 0) {
      if (listen_port_ != 0) throw std::runtime_error("cannot bind local DNS port");
      continue;
    }
    l->port = listen_port_ != 0 ? listen_port_ : bound_port(l->udp_fd);
    l->tcp_fd = bind_socket(SOCK_STREAM, listen_ip_, l->port);
    if (l->tcp_fd < 0) {
      ::close(l->udp_fd);
      l->udp_fd = -1;
      if (listen_port_ != 0) throw std::runtime_error("cannot bind local DNS port");
      continue;
    }
    break;
  }
  if (l->udp_fd < 0 || l->tcp_fd < 0) throw std::runtime_error("cannot bind local DNS port");
  ::listen(l->tcp_fd, 64);

  auto* lp = l.get();
  for (int i = 0; i < 4; ++i) {
    lp->workers.emplace_back([this, lp] {
      for (;;) {
        std::pair<std::string, sockaddr_in> item;
        {
          std::unique_lock<std::mutex> lock(lp->queue_mu);
          lp->queue_cv.wait(lock, [&] { return lp->stop.load() || !lp->queue.empty(); });
          if (lp->stop.load() && lp->queue.empty()) return;
          item = std::move(lp->queue.front());
          lp->queue.pop_front();
        }
        const std::string response = handle_query(item.first);
        sendto(lp->udp_fd, response.data(), response.size(), 0,
               reinterpret_cast<sockaddr*>(&item.second), sizeof(item.second));
      }
    });
  }

  lp->udp_thread = std::thread([lp] {
    char buf[4096];
    while (!lp->stop.load()) {
      pollfd pfd{lp->udp_fd, POLLIN, 0};
      if (::poll(&pfd, 1, 100) <= 0) continue;
      sockaddr_in from{};
      socklen_t from_len = sizeof(from);
      const ssize_t n = recvfrom(lp->udp_fd, buf, sizeof(buf), 0,
                                 reinterpret_cast<sockaddr*>(&from), &from_len);
      if (n <= 0) continue;
      {
        std::lock_guard<std::mutex> lock(lp->queue_mu);
        lp->queue.emplace_back(std::string(buf, static_cast<size_t>(n)), from);
      }
      lp->queue_cv.notify_one();
    }
  });

  lp->tcp_thread = std::thread([this, lp] {
    while (!lp->stop.load()) {
      pollfd pfd{lp->tcp_fd, POLLIN, 0};
      if (::poll(&pfd, 1, 100) <= 0) continue;
      const int conn = ::accept(lp->tcp_fd, nullptr, nullptr);
      if (conn < 0) continue;
      std::thread([this, conn] {
        uint8_t len_buf[2];
        if (recv(conn, len_buf, 2, MSG_WAITALL) == 2) {
          const size_t len = (len_buf[0] << 8) | len_buf[1];
          std::string query(len, '\0');
          if (len > 0 && recv(conn, query.data(), len, MSG_WAITALL) == ssize_t(len)) {
            const std::string response = handle_query(query);
            uint8_t out_len[2] = {static_cast<uint8_t>(response.size() >> 8),
                                  static_cast<uint8_t>(response.size() & 0xff)};
            send(conn, out_len, 2, 0);
            send(conn, response.data(), response.size(), 0);
          }
        }
        ::close(conn);
      }).detach();
    }
  });

  listeners_ = std::move(l);
}

void Forwarder::stop() {
  if (!listeners_) return;
  listeners_->stop = true;
  listeners_->queue_cv.notify_all();
  if (listeners_->udp_thread.joinable()) listeners_->udp_thread.join();
  if (listeners_->tcp_thread.joinable()) listeners_->tcp_thread.join();
  for (auto& w : listeners_->workers) {
    if (w.joinable()) w.join();
  }
  if (listeners_->udp_fd >= 0) ::close(listeners_->udp_fd);
  if (listeners_->tcp_fd >= 0) ::close(listeners_->tcp_fd);
  listeners_.reset();
}

bool Forwarder::apply(const StampData& stamp, std::vector<core::IpAddress> fallback_ips) {
  std::lock_guard<std::mutex> lock(mu_);
  if (stamp_ && *stamp_ == stamp) return false;  // idempotent re-apply

  auto target = std::make_shared<Target>();
  target->stamp = stamp;
  const auto [ip, port] = split_address(stamp.address);
  target->port = port;
  target->candidates = std::move(fallback_ips);
  if (target->candidates.empty() || target->candidates.front() != ip) {
    target->candidates.insert(target->candidates.begin(), ip);
  }
  target->trust = trust_.get();
  target->timeout = timeout_;

  stamp_ = stamp;
  target_ = std::move(target);  // in-flight queries keep the old snapshot
  return true;
}

void Forwarder::set_fail_closed(bool fail_closed) { fail_closed_.store(fail_closed); }

bool Forwarder::fail_closed() const { return fail_closed_.load(); }

std::shared_ptr<Forwarder::Target> Forwarder::snapshot() const {
  std::lock_guard<std::mutex> lock(mu_);
  return target_;
}

std::string Forwarder::handle_query(std::string_view query_bytes) {
  if (fail_closed_.load()) return fail_closed_answer(query_bytes);
  auto target = snapshot();
  if (!target) return fail_closed_answer(query_bytes);
  auto outcome = target->forward(query_bytes);
  if (!outcome.answer) {
    upstream_failures_.fetch_add(1);
    return fail_closed_answer(query_bytes);
  }
  return std::move(*outcome.answer);
}

ProbeResult Forwarder::probe(const std::string& probe_name, std::mt19937_64& rng) {
  ProbeResult result;
  if (fail_closed_.load()) return result;
  auto target = snapshot();
  if (!target) return result;

  const std::string name = dns::random_label(rng) + "." + probe_name;
  const uint16_t id = static_cast<uint16_t>(rng());
  const std::string query = dns::build_query(id, name);

  const auto start = std::chrono::steady_clock::now();
  auto outcome = target->forward(query);
  const auto elapsed = std::chrono::steady_clock::now() - start;
  if (!outcome.answer) {
    result.reason = outcome.reason;
    return result;
  }
  const auto parsed = dns::parse(*outcome.answer);
  if (!parsed || !parsed->is_response ||
      (parsed->rcode != dns::Rcode::noerror && parsed->rcode != dns::Rcode::nxdomain)) {
    result.reason = TransportErrorKind::http;
    return result;
  }
  result.ok = true;
  result.latency_ms = std::chrono::duration<double, std::milli>(elapsed).count();
  return result;
}

uint16_t Forwarder::port() const {
  return listeners_ ? listeners_->port : listen_port_;
}

const std::optional<StampData>& Forwarder::current_stamp() const { return stamp_; }

uint64_t Forwarder::upstream_failures() const { return upstream_failures_.load(); }

// ---------------------------------------------------------------------------
// ClientDaemon

ClientDaemon::ClientDaemon(ClientConfig config, channel::NameChannel& channel, const Clock& clock,
                           uint64_t seed, std::ostream* status_out)
    : config_(std::move(config)),
      channel_(channel),
      clock_(clock),
      rng_(seed),
      status_out_(status_out) {
  if (config_.update_interval > config_.rotation_interval) {
    if (status_out_) {
      *status_out_ << "{\"warning\":\"update_interval exceeds rotation_interval\"}\n";
    }
  }
  forwarder_ = std::make_unique<Forwarder>(config_.local_listen_ip, config_.local_listen_port,
                                           certs::load_trust_store(config_.ca_root_path),
                                           config_.query_timeout);
  std::ifstream in(config_.ca_root_path, std::ios::binary);
  std::string pem((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto root = certs::read_cert_pem(pem);
  unsigned int len = 0;
  X509_digest(root.get(), EVP_sha256(), ca_digest_.data(), &len);
  status_.state = ClientState::fail_closed;  // closed until the first record validates
}

ClientDaemon::~ClientDaemon() {
  if (forwarder_) forwarder_->stop();
}

void ClientDaemon::start() { forwarder_->start(); }

void ClientDaemon::tick() {
  std::lock_guard<std::mutex> lock(mu_);
  const double now = clock_.now();

  bool got_record = false;
  std::optional<core::ServiceRecord> record;
  try {
    if (auto cid = channel_.resolve_pointer(config_.ipns_name)) {
      record = core::parse_record(channel_.fetch_content(*cid));
      got_record = true;
    }
  } catch (const std::exception&) {
    got_record = false;  // keep the last good config
  }

  if (got_record) {
    last_good_record_at_ = now;
    if (!last_known_ip_ || record->newest_ip() != *last_known_ip_) {
      const StampData stamp = make_stamp(*record, config_.server_port, ca_digest_);
      std::vector<core::IpAddress> candidates(record->ips.rbegin(), record->ips.rend());
      forwarder_->apply(stamp, std::move(candidates));
      write_proxy_fragment(stamp);
      last_known_ip_ = record->newest_ip();
    }
  }

  // Probing is upstream egress; in fail-closed it is allowed only on the
  // tick that just validated a fresh record.
  const bool may_probe = got_record || status_.state != ClientState::fail_closed;
  ProbeResult probe_result;
  bool probed = false;
  if (may_probe && forwarder_->current_stamp()) {
    forwarder_->set_fail_closed(false);
    probe_result = forwarder_->probe(config_.probe_name, rng_);
    probed = true;
    if (probe_result.ok) {
      status_.consecutive_probe_failures = 0;
      status_.last_probe_latency_ms = probe_result.latency_ms;
    } else {
      ++status_.consecutive_probe_failures;
      status_.last_probe_latency_ms = std::nullopt;
    }
  }

  const double staleness = last_good_record_at_ < 0 ? std::numeric_limits<double>::infinity()
                                                    : now - last_good_record_at_;
  const bool must_close = staleness > 2 * config_.rotation_interval ||
                          status_.consecutive_probe_failures >= config_.probe_failure_threshold;
  ClientState next;
  if (status_.state == ClientState::fail_closed) {
    // The only way out of fail_closed is a freshly validated record plus a
    // successful probe; there is no path back through stale.
    next = (!must_close && got_record && probed && probe_result.ok) ? ClientState::following
                                                                    : ClientState::fail_closed;
  } else if (must_close) {
    next = ClientState::fail_closed;
  } else if (got_record && (!probed || probe_result.ok)) {
    next = ClientState::following;
  } else {
    next = ClientState::stale;
  }

  status_.state = next;
  status_.current_ip = last_known_ip_;
  status_.last_update_at = now;
  forwarder_->set_fail_closed(next == ClientState::fail_closed);

  if (status_out_) *status_out_ << status_json_line(status_) << "\n";
}

void ClientDaemon::run(std::atomic<bool>& stop) {
  start();
  while (!stop.load()) {
    tick();
    if (!clock_.sleep_for(config_.update_interval, stop)) break;
  }
}

ClientStatus ClientDaemon::status() const {
  std::lock_guard<std::mutex> lock(mu_);
  return status_;
}

void ClientDaemon::write_proxy_fragment(const StampData& stamp) const {
  if (config_.proxy_fragment_path.empty()) return;
  std::ofstream out(config_.proxy_fragment_path, std::ios::trunc);
  if (!out) return;
  out << "# generated upstream fragment; rewritten on every retarget\n";
  out << "server_name = \"" << config_.proxy_server_name << "\"\n";
  out << "stamp = \"" << encode_stamp(stamp) << "\"\n";
}

}  // namespace ninjadoh::client
