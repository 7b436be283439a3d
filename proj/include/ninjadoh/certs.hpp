#pragma once

#include <ctime>
#include <memory>
#include <string>
#include <vector>

#include <openssl/evp.h>
#include <openssl/x509.h>

#include "ninjadoh/core.hpp"

namespace ninjadoh::certs {

struct X509Deleter {
  void operator()(X509* p) const { X509_free(p); }
};
struct PkeyDeleter {
  void operator()(EVP_PKEY* p) const { EVP_PKEY_free(p); }
};
struct StoreDeleter {
  void operator()(X509_STORE* p) const { X509_STORE_free(p); }
};

using X509Ptr = std::unique_ptr<X509, X509Deleter>;
using PkeyPtr = std::unique_ptr<EVP_PKEY, PkeyDeleter>;
using StorePtr = std::unique_ptr<X509_STORE, StoreDeleter>;

/// Self-signed private root plus its signing key.
class CaBundle {
public:
  CaBundle(X509Ptr root, PkeyPtr key);

  X509* root() const { return root_.get(); }
  EVP_PKEY* key() const { return key_.get(); }

  std::string root_pem() const;
  void write_root_pem(const std::string& path) const;
  void write_key_pem(const std::string& path) const;

  /// SHA-256 of the root's DER encoding; pinned into client DNS stamps.
  std::array<uint8_t, 32> root_digest() const;

private:
  X509Ptr root_;
  PkeyPtr key_;
};

/// Per-rotation leaf certificate covering the current IP set.
struct ServerCertificate {
  X509Ptr certificate;
  PkeyPtr private_key;
  std::vector<core::IpAddress> covered_ips;  // newest last
  time_t issued_at = 0;
  time_t expires_at = 0;

  std::string certificate_pem() const;
  std::string private_key_pem() const;
};

/// New ECDSA P-256 private CA. `validity_seconds` bounds the root's window.
CaBundle init_ca(const std::string& subject_cn, double validity_seconds);

CaBundle load_ca(const std::string& root_pem_path, const std::string& key_pem_path);

struct LeafOptions {
  double not_before_skew = 300;      // clock-skew guard
  double validity = 7 * 86400.0;     // far exceeds residence time K*R
  EVP_PKEY* reuse_key = nullptr;     // carry the key across reissues
};

/// Issue a leaf whose CN is the newest address and whose subjectAltName
/// holds an IP entry for every covered address and nothing else.
ServerCertificate issue_server_cert(const CaBundle& ca, const std::vector<core::IpAddress>& ips,
                                    const LeafOptions& options = {});

/// True iff the chain verifies against `root` at time `now` and `target_ip`
/// appears in the leaf's subjectAltName IP entries.
bool verify_chain(X509* root, X509* leaf, const core::IpAddress& target_ip, time_t now);

/// Trust store holding exactly the given root (for TLS client contexts).
StorePtr make_trust_store(X509* root);
StorePtr load_trust_store(const std::string& root_pem_path);

X509Ptr read_cert_pem(const std::string& pem);

/// IP entries of the subjectAltName extension, in certificate order.
std::vector<core::IpAddress> san_ip_entries(X509* cert);

/// Total subjectAltName entries of any type (the spec wants IP entries and
/// nothing else).
size_t san_entry_count(X509* cert);

std::string subject_common_name(X509* cert);

}  // namespace ninjadoh::certs
