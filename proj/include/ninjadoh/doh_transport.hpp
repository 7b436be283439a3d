#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>

#include <openssl/x509.h>

#include "ninjadoh/core.hpp"

namespace ninjadoh::client {

enum class TransportErrorKind { connect, tls, timeout, http };

struct TransportError : std::runtime_error {
  TransportError(TransportErrorKind k, const std::string& what)
      : std::runtime_error(what), kind(k) {}
  TransportErrorKind kind;
};

struct HttpResponse {
  int status = 0;
  std::string body;
  std::string content_type;
};

/// Minimal HTTPS/1.1 client used for every upstream byte the client emits.
/// Dials IP literals, never sets the TLS server_name extension, validates
/// the presented chain against a pinned trust store, and requires the dialed
/// address to appear in the leaf's subjectAltName (the TLS stack enforces
/// both during the handshake).
class DohTransport {
public:
  DohTransport(core::IpAddress ip, uint16_t port, X509_STORE* trust_store,
               double timeout_seconds = 2.0);
  ~DohTransport();
  DohTransport(const DohTransport&) = delete;
  DohTransport& operator=(const DohTransport&) = delete;

  HttpResponse post(const std::string& path, std::string_view body,
                    const std::string& content_type = "application/dns-message");
  HttpResponse get(const std::string& path_and_query);

  void close();
  const core::IpAddress& ip() const { return ip_; }
  uint16_t port() const { return port_; }

  /// Plain TCP connect round-trip in milliseconds (the bench "ping").
  static double tcp_connect_rtt_ms(const core::IpAddress& ip, uint16_t port,
                                   double timeout_seconds = 2.0);

  /// Process-wide count of upstream TCP connections this transport has
  /// opened; lets leak tests assert silence without a packet capture.
  static uint64_t connections_opened();

private:
  struct Conn;
  HttpResponse request(const std::string& head, std::string_view body);
  void ensure_connected();

  core::IpAddress ip_;
  uint16_t port_;
  X509_STORE* trust_;  // not owned
  double timeout_;
  std::unique_ptr<Conn> conn_;
};

}  // namespace ninjadoh::client
