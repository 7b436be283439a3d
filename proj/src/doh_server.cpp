#include "ninjadoh/doh_server.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <iostream>
#include <set>
#include <shared_mutex>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include "ninjadoh/base64.hpp"
#include "ninjadoh/dns_message.hpp"

namespace ninjadoh::server {

namespace {

// One fixed body for every gated-off request; nothing in it may hint at DoH.
constexpr const char* kNotFoundBody =
    "<html>\r\n<head><title>404 Not Found</title></head>\r\n"
    "<body>\r\n<center><h1>404 Not Found</h1></center>\r\n</body>\r\n</html>\r\n";

void respond_not_found(httplib::Response& res) {
  res.status = 404;
  res.set_content(kNotFoundBody, "text/html");
}

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(tolower(c)); });
  return s;
}

}  // namespace

struct DohService::Impl {
  ServerConfig config;

  std::unique_ptr<httplib::SSLServer> tls;
  std::unique_ptr<httplib::Server> mgmt;
  std::thread tls_thread;
  std::thread mgmt_thread;
  std::atomic<uint16_t> bound_port{0};

  mutable std::shared_mutex state_mu;
  std::vector<core::QueryPath> paths;
  std::set<core::IpAddress> live;

  std::mutex upstream_mu;
  std::vector<Upstream> upstreams;
  std::mt19937_64 upstream_rng{0xdead};

  std::atomic<uint64_t> answered{0};
  std::function<std::string()> status_provider;

  bool path_active(const std::string& p) const {
    std::shared_lock lock(state_mu);
    return std::any_of(paths.begin(), paths.end(),
                       [&](const core::QueryPath& q) { return q.str() == p; });
  }

  std::string resolve(std::string_view query_bytes) {
    auto parsed = dns::parse(query_bytes);
    if (!parsed || parsed->is_response || parsed->questions.size() != 1) {
      const uint16_t id = parsed ? parsed->id : 0;
      return dns::build_rcode_response(id, std::nullopt, dns::Rcode::formerr);
    }
    const dns::Question& q = parsed->questions.front();

    if (q.qclass == dns::kClassIN) {
      auto it = config.static_zone.find(lowercase(q.name));
      if (it != config.static_zone.end()) {
        if (q.qtype == dns::kTypeA) {
          return dns::build_a_response(parsed->id, q, {it->second}, config.zone_ttl);
        }
        return dns::build_rcode_response(parsed->id, q, dns::Rcode::noerror);
      }
    }

    // Zone miss: forward to one upstream at random, falling through the
    // rest in random order without repeats.
    std::vector<size_t> order;
    {
      std::lock_guard<std::mutex> lock(upstream_mu);
      order.resize(upstreams.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::shuffle(order.begin(), order.end(), upstream_rng);
    }
    for (size_t idx : order) {
      std::optional<std::string> answer;
      {
        std::function<std::optional<std::string>(std::string_view)> fn;
        {
          std::lock_guard<std::mutex> lock(upstream_mu);
          fn = upstreams[idx].query;
        }
        answer = fn(query_bytes);
      }
      if (answer) return *answer;
    }
    if (order.empty() && !config.static_zone.empty()) {
      // The seeded zone is authoritative in loopback mode.
      return dns::build_rcode_response(parsed->id, q, dns::Rcode::nxdomain);
    }
    return dns::build_rcode_response(parsed->id, q, dns::Rcode::servfail);
  }

  void answer(const std::string& query_bytes, httplib::Response& res) {
    res.status = 200;
    res.set_content(resolve(query_bytes), "application/dns-message");
    answered.fetch_add(1);
  }

  void handle(const httplib::Request& req, httplib::Response& res) {
    if (!path_active(req.path)) {
      respond_not_found(res);
      return;
    }
    if (req.method == "GET") {
      if (!req.has_param("dns")) {
        respond_not_found(res);
        return;
      }
      auto decoded = base64url_decode(req.get_param_value("dns"));
      if (!decoded || decoded->size() > config.max_dns_payload) {
        respond_not_found(res);
        return;
      }
      answer(*decoded, res);
      return;
    }
    if (req.method == "POST") {
      if (req.get_header_value("Content-Type").rfind("application/dns-message", 0) != 0) {
        respond_not_found(res);
        return;
      }
      if (req.body.size() > config.max_dns_payload) {
        res.status = 413;
        res.set_content("payload too large", "text/plain");
        return;
      }
      answer(req.body, res);
      return;
    }
    respond_not_found(res);
  }
};

DohService::DohService(ServerConfig config) : impl_(std::make_unique<Impl>()) {
  impl_->config = std::move(config);
}

DohService::~DohService() { stop(); }

void DohService::start(const certs::ServerCertificate& initial_cert,
                       std::vector<core::QueryPath> initial_paths,
                       std::vector<core::IpAddress> live_ips) {
  if (impl_->tls) throw std::logic_error("service already started");
  {
    std::unique_lock lock(impl_->state_mu);
    impl_->paths = std::move(initial_paths);
    impl_->live = std::set<core::IpAddress>(live_ips.begin(), live_ips.end());
  }

  impl_->tls = std::make_unique<httplib::SSLServer>(initial_cert.certificate.get(),
                                                    initial_cert.private_key.get());
  if (!impl_->tls->is_valid()) throw std::runtime_error("TLS listener initialization failed");

  auto handler = [impl = impl_.get()](const httplib::Request& req, httplib::Response& res) {
    impl->handle(req, res);
  };
  impl_->tls->Get(".*", handler);
  impl_->tls->Post(".*", handler);
  // Anything unmatched (other methods) gets the same generic 404.
  impl_->tls->set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) respond_not_found(res);
  });
  impl_->tls->set_payload_max_length(1024 * 1024);
  impl_->tls->set_keep_alive_max_count(1024);

  const auto& cfg = impl_->config;
  int port = cfg.listen_port;
  if (port == 0) {
    port = impl_->tls->bind_to_any_port(cfg.bind_address);
    if (port < 0) throw std::runtime_error("bind failed on " + cfg.bind_address);
  } else if (!impl_->tls->bind_to_port(cfg.bind_address, port)) {
    throw std::runtime_error("bind failed on " + cfg.bind_address + ":" + std::to_string(port));
  }
  impl_->bound_port = static_cast<uint16_t>(port);
  impl_->tls_thread = std::thread([impl = impl_.get()] { impl->tls->listen_after_bind(); });
  impl_->tls->wait_until_ready();

  if (cfg.management_bind) {
    impl_->mgmt = std::make_unique<httplib::Server>();
    impl_->mgmt->Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("{\"status\":\"ok\"}", "application/json");
    });
    impl_->mgmt->Get("/status", [impl = impl_.get()](const httplib::Request&, httplib::Response& res) {
      std::string body = "{}";
      if (impl->status_provider) body = impl->status_provider();
      res.set_content(body, "application/json");
    });
    int mport = cfg.management_port;
    if (mport == 0) {
      mport = impl_->mgmt->bind_to_any_port(*cfg.management_bind);
    } else {
      impl_->mgmt->bind_to_port(*cfg.management_bind, mport);
    }
    impl_->mgmt_thread = std::thread([impl = impl_.get()] { impl->mgmt->listen_after_bind(); });
    impl_->mgmt->wait_until_ready();
  }
}

void DohService::stop() {
  if (impl_->tls) {
    impl_->tls->stop();
    if (impl_->tls_thread.joinable()) impl_->tls_thread.join();
  }
  if (impl_->mgmt) {
    impl_->mgmt->stop();
    if (impl_->mgmt_thread.joinable()) impl_->mgmt_thread.join();
  }
}

bool DohService::swap_live_credentials(const certs::ServerCertificate& cert,
                                       std::vector<core::QueryPath> paths,
                                       std::vector<core::IpAddress> live_ips) {
  const auto san = certs::san_ip_entries(cert.certificate.get());
  const std::set<core::IpAddress> san_set(san.begin(), san.end());
  const std::set<core::IpAddress> live_set(live_ips.begin(), live_ips.end());
  if (san_set != live_set || san.size() != certs::san_entry_count(cert.certificate.get())) {
    return false;
  }
  if (!impl_->tls) return false;
  std::unique_lock lock(impl_->state_mu);
  impl_->tls->update_certs(cert.certificate.get(), cert.private_key.get());
  impl_->paths = std::move(paths);
  impl_->live = live_set;
  return true;
}

void DohService::set_upstreams(std::vector<Upstream> upstreams, uint64_t seed) {
  std::lock_guard<std::mutex> lock(impl_->upstream_mu);
  impl_->upstreams = std::move(upstreams);
  impl_->upstream_rng.seed(seed);
}

std::string DohService::resolve_query(std::string_view dns_query) {
  return impl_->resolve(dns_query);
}

uint16_t DohService::port() const { return impl_->bound_port.load(); }

uint64_t DohService::queries_answered() const { return impl_->answered.load(); }

std::vector<core::QueryPath> DohService::active_paths() const {
  std::shared_lock lock(impl_->state_mu);
  return impl_->paths;
}

void DohService::set_status_provider(std::function<std::string()> provider) {
  impl_->status_provider = std::move(provider);
}

std::string IterationLog::json() const {
  nlohmann::ordered_json j;
  j["iteration"] = iteration;
  j["new_ip"] = new_ip;
  j["released_ip"] = released_ip;
  j["cid"] = cid;
  j["path_len"] = path_len;
  j["duration_ms"] = duration_ms;
  return j.dump();
}

RotationDaemon::RotationDaemon(ServerConfig config, provider::AddressProvider& provider,
                               channel::NameChannel& channel, channel::IpnsName name,
                               certs::CaBundle ca, const Clock& clock, uint64_t seed)
    : config_(std::move(config)),
      provider_(provider),
      channel_(channel),
      ipns_name_(std::move(name)),
      ca_(std::move(ca)),
      clock_(clock),
      rng_(seed),
      log_sink_([](const std::string& line) { std::cerr << line << "\n"; }) {
  if (config_.app_interface_count < 1) {
    throw std::invalid_argument("need at least one application interface");
  }
  service_ = std::make_unique<DohService>(config_);
}

RotationDaemon::~RotationDaemon() = default;

void RotationDaemon::init() {
  std::lock_guard<std::mutex> lock(mu_);
  if (!state_.empty()) throw std::logic_error("daemon already initialized");

  const double now = clock_.now();
  std::vector<core::Lease> leases;
  for (int i = 0; i < config_.app_interface_count; ++i) {
    const core::InterfaceId iface{i, core::InterfaceRole::application};
    const core::IpAddress addr = provider_.allocate();
    provider_.assign(addr, iface);
    // strictly ordered assignment times within the bootstrap instant
    leases.push_back(core::Lease{addr, iface, now + i * 1e-6});
  }
  state_ = core::RotationState(std::move(leases), config_.rotation_interval);

  auto cert = certs::issue_server_cert(ca_, state_.addresses());
  EVP_PKEY_up_ref(cert.private_key.get());
  leaf_key_.reset(cert.private_key.get());

  paths_.push_back(core::QueryPath::generate(rng_));
  service_->start(cert, {paths_.begin(), paths_.end()}, state_.addresses());
  publish_current(clock_.now(), "");
}

void RotationDaemon::publish_current(double iteration_started_at, std::string released_ip) {
  // Callers hold mu_.
  const auto record = core::make_service_record(state_.addresses(), paths_.back(),
                                                static_cast<int64_t>(clock_.now()));
  const std::string bytes = core::canonical_record_bytes(record);
  const double nominal_interval =
      config_.rotation_range ? config_.rotation_range->first : config_.rotation_interval;

  std::string cid_token = "unpublished";
  for (int attempt = 0; attempt <= config_.publish_retries; ++attempt) {
    try {
      const channel::ContentId cid = channel_.publish_content(bytes);
      // TTL discipline is enforced here even though the simulated channel
      // ignores the metadata.
      channel::PointerRecord::make(ipns_name_, cid, clock_.now(), config_.pointer_lifetime,
                                   config_.pointer_ttl, nominal_interval);
      channel_.update_pointer(ipns_name_, cid);
      if (config_.strict_publish_verify && channel_.fetch_content(cid) != bytes) {
        throw channel::ChannelError("self-verification after publish failed");
      }
      cid_token = cid.token();
      break;
    } catch (const channel::ChannelError& e) {
      if (attempt == config_.publish_retries) {
        log_sink_(std::string("{\"publish_error\":\"") + e.what() + "\"}");
        break;
      }
      clock_.sleep_for(config_.publish_retry_backoff);
    }
  }

  last_record_ = record;

  IterationLog log;
  log.iteration = iteration_;
  log.new_ip = state_.newest().address.to_string();
  log.released_ip = std::move(released_ip);
  log.cid = cid_token;
  log.path_len = paths_.back().str().size() - 1;
  log.duration_ms = (clock_.now() - iteration_started_at) * 1000.0;
  history_.push_back(log);
  log_sink_(log.json());
}

void RotationDaemon::step() {
  std::lock_guard<std::mutex> lock(mu_);
  if (state_.empty()) throw std::logic_error("init() must run before step()");
  const double started = clock_.now();
  ++iteration_;

  std::optional<core::IpAddress> fresh;
  for (int attempt = 0; attempt <= config_.allocate_retries; ++attempt) {
    try {
      fresh = provider_.allocate();
      break;
    } catch (const provider::PoolExhausted&) {
      if (attempt == config_.allocate_retries) {
        log_sink_("{\"rotation_skipped\":\"pool exhausted\"}");
        return;  // previous state keeps serving
      }
      clock_.sleep_for(config_.publish_retry_backoff);
    }
  }

  double now = clock_.now();
  if (now <= state_.newest().assigned_at) now = state_.newest().assigned_at + 1e-6;
  const core::InterfaceId displaced_iface = state_.oldest().interface;
  auto outcome = core::rotation_step(state_, *fresh, now);
  provider_.assign(*fresh, displaced_iface);
  provider_.release(outcome.released);
  state_ = std::move(outcome.state);

  auto cert = certs::issue_server_cert(
      ca_, state_.addresses(),
      certs::LeafOptions{.reuse_key =
                             config_.fresh_leaf_key_per_rotation ? nullptr : leaf_key_.get()});
  if (config_.fresh_leaf_key_per_rotation) {
    EVP_PKEY_up_ref(cert.private_key.get());
    leaf_key_.reset(cert.private_key.get());
  }

  paths_.push_back(core::QueryPath::generate(rng_));
  while (paths_.size() > static_cast<size_t>(config_.app_interface_count)) paths_.pop_front();

  if (!service_->swap_live_credentials(cert, {paths_.begin(), paths_.end()},
                                       state_.addresses())) {
    throw std::logic_error("credential swap rejected for a daemon-built certificate");
  }

  publish_current(started, outcome.released.to_string());
}

void RotationDaemon::run(std::atomic<bool>& stop) {
  init();
  while (!stop.load()) {
    double interval = config_.rotation_interval;
    if (config_.rotation_range) {
      std::uniform_real_distribution<double> dist(config_.rotation_range->first,
                                                  config_.rotation_range->second);
      std::lock_guard<std::mutex> lock(mu_);
      interval = dist(rng_);
    }
    if (!clock_.sleep_for(interval, stop)) break;
    step();
  }
  service_->stop();
}

core::RotationState RotationDaemon::state() const {
  std::lock_guard<std::mutex> lock(mu_);
  return state_;
}

std::vector<IterationLog> RotationDaemon::history() const {
  std::lock_guard<std::mutex> lock(mu_);
  return history_;
}

core::ServiceRecord RotationDaemon::current_record() const {
  std::lock_guard<std::mutex> lock(mu_);
  if (!last_record_) throw std::logic_error("no record published yet");
  return *last_record_;
}

void RotationDaemon::set_log_sink(std::function<void(const std::string&)> sink) {
  std::lock_guard<std::mutex> lock(mu_);
  log_sink_ = std::move(sink);
}

}  // namespace ninjadoh::server
