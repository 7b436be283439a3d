#include "ninjadoh/doh_transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <openssl/err.h>
#include <openssl/ssl.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>

namespace ninjadoh::client {

namespace {

std::atomic<uint64_t> g_connections{0};

int connect_with_timeout(const core::IpAddress& ip, uint16_t port, double timeout_seconds) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw TransportError(TransportErrorKind::connect, "socket() failed");

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  addr.sin_addr.s_addr = htonl(ip.value());

  const int flags = fcntl(fd, F_GETFL, 0);
  fcntl(fd, F_SETFL, flags | O_NONBLOCK);

  int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  if (rc < 0 && errno != EINPROGRESS) {
    ::close(fd);
    throw TransportError(TransportErrorKind::connect,
                         "connect to " + ip.to_string() + " failed: " + strerror(errno));
  }
  if (rc < 0) {
    pollfd pfd{fd, POLLOUT, 0};
    rc = ::poll(&pfd, 1, static_cast<int>(timeout_seconds * 1000));
    if (rc == 0) {
      ::close(fd);
      throw TransportError(TransportErrorKind::timeout, "connect timeout");
    }
    int err = 0;
    socklen_t len = sizeof(err);
    getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
    if (rc < 0 || err != 0) {
      ::close(fd);
      throw TransportError(TransportErrorKind::connect,
                           "connect to " + ip.to_string() + " failed: " + strerror(err));
    }
  }
  fcntl(fd, F_SETFL, flags);  // back to blocking; IO deadlines via SO_*TIMEO

  timeval tv{};
  tv.tv_sec = static_cast<time_t>(timeout_seconds);
  tv.tv_usec = static_cast<suseconds_t>((timeout_seconds - double(tv.tv_sec)) * 1e6);
  setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
  setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
  int one = 1;
  setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return fd;
}

}  // namespace

struct DohTransport::Conn {
  int fd = -1;
  SSL_CTX* ctx = nullptr;
  SSL* ssl = nullptr;

  ~Conn() {
    if (ssl) {
      SSL_shutdown(ssl);
      SSL_free(ssl);
    }
    if (ctx) SSL_CTX_free(ctx);
    if (fd >= 0) ::close(fd);
  }
};

DohTransport::DohTransport(core::IpAddress ip, uint16_t port, X509_STORE* trust_store,
                           double timeout_seconds)
    : ip_(ip), port_(port), trust_(trust_store), timeout_(timeout_seconds) {}

DohTransport::~DohTransport() = default;

void DohTransport::close() { conn_.reset(); }

void DohTransport::ensure_connected() {
  if (conn_) return;
  auto conn = std::make_unique<Conn>();
  conn->fd = connect_with_timeout(ip_, port_, timeout_);
  g_connections.fetch_add(1);

  conn->ctx = SSL_CTX_new(TLS_client_method());
  if (!conn->ctx) throw TransportError(TransportErrorKind::tls, "SSL_CTX_new failed");
  SSL_CTX_set_min_proto_version(conn->ctx, TLS1_2_VERSION);
  if (trust_) {
    X509_STORE_up_ref(trust_);
    SSL_CTX_set_cert_store(conn->ctx, trust_);
    SSL_CTX_set_verify(conn->ctx, SSL_VERIFY_PEER, nullptr);
  }

  conn->ssl = SSL_new(conn->ctx);
  if (!conn->ssl) throw TransportError(TransportErrorKind::tls, "SSL_new failed");

  // The dialed address must appear in the peer's subjectAltName. No
  // server_name extension is ever set: the protocol has no hostname.
  X509_VERIFY_PARAM* param = SSL_get0_param(conn->ssl);
  X509_VERIFY_PARAM_set1_ip_asc(param, ip_.to_string().c_str());

  SSL_set_fd(conn->ssl, conn->fd);
  ERR_clear_error();
  if (SSL_connect(conn->ssl) != 1) {
    const long vr = SSL_get_verify_result(conn->ssl);
    std::string what = "TLS handshake with " + ip_.to_string() + " failed";
    if (vr != X509_V_OK) {
      what += std::string(": ") + X509_verify_cert_error_string(vr);
    }
    throw TransportError(TransportErrorKind::tls, what);
  }
  conn_ = std::move(conn);
}

HttpResponse DohTransport::request(const std::string& head, std::string_view body) {
  for (int attempt = 0; attempt < 2; ++attempt) {
    ensure_connected();
    std::string out = head;
    out.append(body.data(), body.size());

    size_t written = 0;
    bool io_failed = false;
    while (written < out.size()) {
      const int n = SSL_write(conn_->ssl, out.data() + written,
                              static_cast<int>(out.size() - written));
      if (n <= 0) {
        io_failed = true;
        break;
      }
      written += static_cast<size_t>(n);
    }
    if (io_failed) {
      conn_.reset();
      if (attempt == 0) continue;  // stale keep-alive; dial once more
      throw TransportError(TransportErrorKind::connect, "write failed");
    }

    std::string buf;
    auto read_more = [&]() -> bool {
      char chunk[4096];
      const int n = SSL_read(conn_->ssl, chunk, sizeof(chunk));
      if (n <= 0) return false;
      buf.append(chunk, static_cast<size_t>(n));
      return true;
    };

    size_t header_end = std::string::npos;
    bool retry = false;
    while ((header_end = buf.find("\r\n\r\n")) == std::string::npos) {
      if (!read_more()) {
        conn_.reset();
        if (buf.empty() && attempt == 0) {
          retry = true;  // keep-alive died before the response; dial once more
          break;
        }
        throw TransportError(TransportErrorKind::timeout, "no response from server");
      }
      if (buf.size() > 64 * 1024) {
        conn_.reset();
        throw TransportError(TransportErrorKind::http, "response header too large");
      }
    }
    if (retry) continue;

    HttpResponse resp;
    const std::string header = buf.substr(0, header_end);
    if (header.rfind("HTTP/1.1 ", 0) != 0 && header.rfind("HTTP/1.0 ", 0) != 0) {
      conn_.reset();
      throw TransportError(TransportErrorKind::http, "malformed status line");
    }
    resp.status = std::atoi(header.c_str() + 9);

    size_t content_length = 0;
    bool keep_alive = true;
    size_t line_start = header.find("\r\n") + 2;
    while (line_start < header.size()) {
      size_t line_end = header.find("\r\n", line_start);
      if (line_end == std::string::npos) line_end = header.size();
      std::string line = header.substr(line_start, line_end - line_start);
      const size_t colon = line.find(':');
      if (colon != std::string::npos) {
        std::string key = line.substr(0, colon);
        std::string value = line.substr(colon + 1);
        while (!value.empty() && value.front() == ' ') value.erase(value.begin());
        std::transform(key.begin(), key.end(), key.begin(),
                       [](unsigned char c) { return static_cast<char>(tolower(c)); });
        if (key == "content-length") content_length = std::stoul(value);
        if (key == "content-type") resp.content_type = value;
        if (key == "connection" && value.find("close") != std::string::npos) keep_alive = false;
      }
      line_start = line_end + 2;
    }

    resp.body = buf.substr(header_end + 4);
    while (resp.body.size() < content_length) {
      const size_t before = buf.size();
      if (!read_more()) {
        conn_.reset();
        throw TransportError(TransportErrorKind::timeout, "truncated response body");
      }
      resp.body.append(buf, before, buf.size() - before);
    }
    resp.body.resize(content_length);
    if (!keep_alive) conn_.reset();
    return resp;
  }
  throw TransportError(TransportErrorKind::connect, "request failed");
}

HttpResponse DohTransport::post(const std::string& path, std::string_view body,
                                const std::string& content_type) {
  std::string head = "POST " + path + " HTTP/1.1\r\n";
  head += "Host: " + ip_.to_string() + ":" + std::to_string(port_) + "\r\n";
  head += "Content-Type: " + content_type + "\r\n";
  head += "Accept: application/dns-message\r\n";
  head += "Content-Length: " + std::to_string(body.size()) + "\r\n";
  head += "Connection: keep-alive\r\n\r\n";
  return request(head, body);
}

HttpResponse DohTransport::get(const std::string& path_and_query) {
  std::string head = "GET " + path_and_query + " HTTP/1.1\r\n";
  head += "Host: " + ip_.to_string() + ":" + std::to_string(port_) + "\r\n";
  head += "Accept: application/dns-message\r\n";
  head += "Connection: keep-alive\r\n\r\n";
  return request(head, {});
}

double DohTransport::tcp_connect_rtt_ms(const core::IpAddress& ip, uint16_t port,
                                        double timeout_seconds) {
  const auto start = std::chrono::steady_clock::now();
  const int fd = connect_with_timeout(ip, port, timeout_seconds);
  const auto elapsed = std::chrono::steady_clock::now() - start;
  ::close(fd);
  return std::chrono::duration<double, std::milli>(elapsed).count();
}

uint64_t DohTransport::connections_opened() { return g_connections.load(); }

}  // namespace ninjadoh::client
