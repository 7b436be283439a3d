// HTTP API profile of the name channel, speaking to a local IPFS daemon.
// Integration-only: nothing in the test suite requires a running daemon.

#include <set>

#include "ninjadoh/channel.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

namespace ninjadoh::channel {

namespace {

// Go-style duration string for the daemon's lifetime/ttl parameters.
std::string go_duration(double seconds) {
  const auto s = static_cast<long long>(seconds);
  if (s > 0 && s % 3600 == 0) return std::to_string(s / 3600) + "h";
  return std::to_string(s) + "s";
}

std::string strip_ipfs_prefix(const std::string& path) {
  constexpr std::string_view prefix = "/ipfs/";
  if (path.rfind(prefix, 0) == 0) return path.substr(prefix.size());
  return path;
}

}  // namespace

struct IpfsHttpChannel::Impl {
  httplib::Client http;
  std::string lifetime;
  std::string ttl;
  std::mutex mu;
  std::set<std::string> published;  // tokens this session has added

  Impl(const std::string& base, double timeout) : http(base) {
    http.set_connection_timeout(static_cast<time_t>(timeout));
    http.set_read_timeout(static_cast<time_t>(timeout));
  }
};

IpfsHttpChannel::IpfsHttpChannel(std::string api_base_url, double lifetime, double ttl,
                                 double timeout_seconds)
    : impl_(std::make_unique<Impl>(api_base_url, timeout_seconds)) {
  impl_->lifetime = go_duration(lifetime);
  impl_->ttl = go_duration(ttl);
}

IpfsHttpChannel::~IpfsHttpChannel() = default;

ContentId IpfsHttpChannel::publish_content(std::string_view bytes) {
  if (bytes.empty()) throw std::invalid_argument("cannot publish empty content");
  httplib::MultipartFormDataItems items = {
      {"file", std::string(bytes), "record.json", "application/octet-stream"},
  };
  auto res = impl_->http.Post("/api/v0/add", items);
  if (!res) throw TransportError("ipfs add: daemon unreachable");
  if (res->status != 200) {
    throw TransportError("ipfs add: HTTP " + std::to_string(res->status));
  }
  std::string token;
  try {
    token = nlohmann::json::parse(res->body).at("Hash").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw TransportError("ipfs add: unexpected response body");
  }
  ContentId cid = ContentId::from_token(token);
  std::lock_guard<std::mutex> lock(impl_->mu);
  impl_->published.insert(cid.token());
  return cid;
}

void IpfsHttpChannel::update_pointer(const IpnsName& name, const ContentId& cid) {
  {
    std::lock_guard<std::mutex> lock(impl_->mu);
    if (!impl_->published.count(cid.token())) throw UnknownCid();
  }
  const std::string target = "/api/v0/name/publish?key=" + name.value() +
                             "&lifetime=" + impl_->lifetime + "&ttl=" + impl_->ttl +
                             "&allow-offline=true&arg=" + cid.token();
  auto res = impl_->http.Post(target);
  if (!res) throw TransportError("ipns publish: daemon unreachable");
  if (res->status != 200) {
    throw TransportError("ipns publish: HTTP " + std::to_string(res->status));
  }
}

std::optional<ContentId> IpfsHttpChannel::resolve_pointer(const IpnsName& name) {
  auto res = impl_->http.Post("/api/v0/name/resolve?arg=" + name.value());
  if (!res) throw TransportError("ipns resolve: daemon unreachable");
  if (res->status != 200) return std::nullopt;
  try {
    const auto path = nlohmann::json::parse(res->body).at("Path").get<std::string>();
    return ContentId::from_token(strip_ipfs_prefix(path));
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

std::string IpfsHttpChannel::fetch_content(const ContentId& cid) {
  auto res = impl_->http.Post("/api/v0/cat?arg=" + cid.token());
  if (!res) throw TransportError("ipfs cat: daemon unreachable");
  if (res->status != 200) throw UnknownCid();
  if (cid.is_digest_form() && ContentId::from_bytes(res->body) != cid) {
    throw IntegrityMismatch();
  }
  return res->body;
}

}  // namespace ninjadoh::channel
