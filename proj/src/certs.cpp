#include "ninjadoh/certs.hpp"

#include <openssl/bio.h>
#include <openssl/err.h>
#include <openssl/pem.h>
#include <openssl/rand.h>
#include <openssl/x509v3.h>

#include <fstream>
#include <functional>
#include <stdexcept>

namespace ninjadoh::certs {

namespace {

struct BioDeleter {
  void operator()(BIO* p) const { BIO_free(p); }
};
using BioPtr = std::unique_ptr<BIO, BioDeleter>;

[[noreturn]] void fail(const std::string& what) {
  const unsigned long err = ERR_get_error();
  char buf[256] = {0};
  if (err) ERR_error_string_n(err, buf, sizeof(buf));
  throw std::runtime_error(what + (err ? std::string(": ") + buf : std::string()));
}

PkeyPtr generate_p256_key() {
  PkeyPtr key(EVP_PKEY_Q_keygen(nullptr, nullptr, "EC", "P-256"));
  if (!key) fail("EC key generation failed");
  return key;
}

void set_validity(X509* cert, time_t not_before, time_t not_after) {
  if (!X509_time_adj_ex(X509_getm_notBefore(cert), 0, 0, &not_before) ||
      !X509_time_adj_ex(X509_getm_notAfter(cert), 0, 0, &not_after)) {
    fail("setting certificate validity failed");
  }
}

void set_serial_random(X509* cert) {
  ASN1_INTEGER* serial = X509_get_serialNumber(cert);
  uint64_t val = 0;
  if (RAND_bytes(reinterpret_cast<unsigned char*>(&val), sizeof(val)) != 1) {
    fail("serial randomization failed");
  }
  ASN1_INTEGER_set_uint64(serial, val >> 1);  // keep it positive
}

void add_extension(X509* cert, X509* issuer, int nid, const char* value) {
  X509V3_CTX ctx;
  X509V3_set_ctx_nodb(&ctx);
  X509V3_set_ctx(&ctx, issuer, cert, nullptr, nullptr, 0);
  X509_EXTENSION* ext = X509V3_EXT_conf_nid(nullptr, &ctx, nid, value);
  if (!ext) fail(std::string("extension failed: ") + value);
  X509_add_ext(cert, ext, -1);
  X509_EXTENSION_free(ext);
}

X509_NAME* make_name(const std::string& cn) {
  X509_NAME* name = X509_NAME_new();
  if (!name ||
      !X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_ASC,
                                  reinterpret_cast<const unsigned char*>(cn.c_str()), -1, -1, 0)) {
    fail("building subject name failed");
  }
  return name;
}

std::string pem_of(const std::function<int(BIO*)>& writer) {
  BioPtr bio(BIO_new(BIO_s_mem()));
  if (!bio || !writer(bio.get())) fail("PEM encoding failed");
  char* data = nullptr;
  const long len = BIO_get_mem_data(bio.get(), &data);
  return std::string(data, static_cast<size_t>(len));
}

}  // namespace

CaBundle::CaBundle(X509Ptr root, PkeyPtr key) : root_(std::move(root)), key_(std::move(key)) {
  if (!root_ || !key_) throw std::invalid_argument("CA bundle needs a root and a key");
}

std::string CaBundle::root_pem() const {
  return pem_of([&](BIO* b) { return PEM_write_bio_X509(b, root_.get()); });
}

void CaBundle::write_root_pem(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << root_pem();
}

void CaBundle::write_key_pem(const std::string& path) const {
  const std::string pem = pem_of([&](BIO* b) {
    return PEM_write_bio_PrivateKey(b, key_.get(), nullptr, nullptr, 0, nullptr, nullptr);
  });
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << pem;
}

std::array<uint8_t, 32> CaBundle::root_digest() const {
  std::array<uint8_t, 32> digest{};
  unsigned int len = 0;
  if (!X509_digest(root_.get(), EVP_sha256(), digest.data(), &len) || len != digest.size()) {
    fail("root digest failed");
  }
  return digest;
}

std::string ServerCertificate::certificate_pem() const {
  return pem_of([&](BIO* b) { return PEM_write_bio_X509(b, certificate.get()); });
}

std::string ServerCertificate::private_key_pem() const {
  return pem_of([&](BIO* b) {
    return PEM_write_bio_PrivateKey(b, private_key.get(), nullptr, nullptr, 0, nullptr, nullptr);
  });
}

CaBundle init_ca(const std::string& subject_cn, double validity_seconds) {
  if (validity_seconds <= 0) throw std::invalid_argument("CA validity must be positive");
  PkeyPtr key = generate_p256_key();
  X509Ptr cert(X509_new());
  if (!cert) fail("X509_new failed");

  X509_set_version(cert.get(), X509_VERSION_3);
  set_serial_random(cert.get());
  const time_t now = time(nullptr);
  set_validity(cert.get(), now - 300, now + static_cast<time_t>(validity_seconds));

  X509_NAME* name = make_name(subject_cn);
  X509_set_subject_name(cert.get(), name);
  X509_set_issuer_name(cert.get(), name);
  X509_NAME_free(name);

  X509_set_pubkey(cert.get(), key.get());
  add_extension(cert.get(), cert.get(), NID_basic_constraints, "critical,CA:TRUE");
  add_extension(cert.get(), cert.get(), NID_key_usage, "critical,keyCertSign,cRLSign");
  add_extension(cert.get(), cert.get(), NID_subject_key_identifier, "hash");

  if (X509_sign(cert.get(), key.get(), EVP_sha256()) <= 0) fail("CA self-sign failed");
  return CaBundle(std::move(cert), std::move(key));
}

CaBundle load_ca(const std::string& root_pem_path, const std::string& key_pem_path) {
  BioPtr cert_bio(BIO_new_file(root_pem_path.c_str(), "r"));
  if (!cert_bio) throw std::runtime_error("cannot read " + root_pem_path);
  X509Ptr root(PEM_read_bio_X509(cert_bio.get(), nullptr, nullptr, nullptr));
  if (!root) fail("parsing CA certificate failed");

  BioPtr key_bio(BIO_new_file(key_pem_path.c_str(), "r"));
  if (!key_bio) throw std::runtime_error("cannot read " + key_pem_path);
  PkeyPtr key(PEM_read_bio_PrivateKey(key_bio.get(), nullptr, nullptr, nullptr));
  if (!key) fail("parsing CA key failed");
  return CaBundle(std::move(root), std::move(key));
}

ServerCertificate issue_server_cert(const CaBundle& ca, const std::vector<core::IpAddress>& ips,
                                    const LeafOptions& options) {
  if (ips.empty()) throw std::invalid_argument("certificate needs at least one address");

  PkeyPtr key;
  if (options.reuse_key) {
    EVP_PKEY_up_ref(options.reuse_key);
    key.reset(options.reuse_key);
  } else {
    key = generate_p256_key();
  }

  X509Ptr cert(X509_new());
  if (!cert) fail("X509_new failed");
  X509_set_version(cert.get(), X509_VERSION_3);
  set_serial_random(cert.get());

  const time_t now = time(nullptr);
  const time_t not_before = now - static_cast<time_t>(options.not_before_skew);
  const time_t not_after = now + static_cast<time_t>(options.validity);
  set_validity(cert.get(), not_before, not_after);

  // CN is the newest address; SAN carries every covered address.
  X509_NAME* subject = make_name(ips.back().to_string());
  X509_set_subject_name(cert.get(), subject);
  X509_NAME_free(subject);
  X509_set_issuer_name(cert.get(), X509_get_subject_name(ca.root()));
  X509_set_pubkey(cert.get(), key.get());

  std::string san;
  for (const auto& ip : ips) {
    if (!san.empty()) san += ",";
    san += "IP:" + ip.to_string();
  }
  add_extension(cert.get(), ca.root(), NID_subject_alt_name, san.c_str());
  add_extension(cert.get(), ca.root(), NID_basic_constraints, "critical,CA:FALSE");
  add_extension(cert.get(), ca.root(), NID_key_usage, "critical,digitalSignature");
  add_extension(cert.get(), ca.root(), NID_ext_key_usage, "serverAuth");

  if (X509_sign(cert.get(), ca.key(), EVP_sha256()) <= 0) fail("leaf signing failed");

  ServerCertificate out;
  out.certificate = std::move(cert);
  out.private_key = std::move(key);
  out.covered_ips = ips;
  out.issued_at = now;
  out.expires_at = not_after;
  return out;
}

bool verify_chain(X509* root, X509* leaf, const core::IpAddress& target_ip, time_t now) {
  StorePtr store = make_trust_store(root);
  std::unique_ptr<X509_STORE_CTX, decltype(&X509_STORE_CTX_free)> ctx(X509_STORE_CTX_new(),
                                                                      X509_STORE_CTX_free);
  if (!ctx || !X509_STORE_CTX_init(ctx.get(), store.get(), leaf, nullptr)) {
    fail("verify context init failed");
  }
  X509_VERIFY_PARAM* param = X509_STORE_CTX_get0_param(ctx.get());
  X509_VERIFY_PARAM_set_time(param, now);
  if (X509_verify_cert(ctx.get()) != 1) return false;
  return X509_check_ip_asc(leaf, target_ip.to_string().c_str(), 0) == 1;
}

StorePtr make_trust_store(X509* root) {
  StorePtr store(X509_STORE_new());
  if (!store || X509_STORE_add_cert(store.get(), root) != 1) fail("trust store build failed");
  return store;
}

StorePtr load_trust_store(const std::string& root_pem_path) {
  BioPtr bio(BIO_new_file(root_pem_path.c_str(), "r"));
  if (!bio) throw std::runtime_error("cannot read " + root_pem_path);
  X509Ptr root(PEM_read_bio_X509(bio.get(), nullptr, nullptr, nullptr));
  if (!root) fail("parsing CA certificate failed");
  return make_trust_store(root.get());
}

X509Ptr read_cert_pem(const std::string& pem) {
  BioPtr bio(BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())));
  X509Ptr cert(PEM_read_bio_X509(bio.get(), nullptr, nullptr, nullptr));
  if (!cert) fail("parsing certificate PEM failed");
  return cert;
}

std::vector<core::IpAddress> san_ip_entries(X509* cert) {
  std::vector<core::IpAddress> out;
  auto* names = static_cast<GENERAL_NAMES*>(X509_get_ext_d2i(cert, NID_subject_alt_name, nullptr, nullptr));
  if (!names) return out;
  for (int i = 0; i < sk_GENERAL_NAME_num(names); ++i) {
    const GENERAL_NAME* gn = sk_GENERAL_NAME_value(names, i);
    if (gn->type == GEN_IPADD && gn->d.iPAddress->length == 4) {
      const unsigned char* d = gn->d.iPAddress->data;
      const uint32_t v = (uint32_t(d[0]) << 24) | (uint32_t(d[1]) << 16) | (uint32_t(d[2]) << 8) |
                         uint32_t(d[3]);
      out.push_back(core::IpAddress::from_uint32(v));
    }
  }
  GENERAL_NAMES_free(names);
  return out;
}

size_t san_entry_count(X509* cert) {
  auto* names = static_cast<GENERAL_NAMES*>(X509_get_ext_d2i(cert, NID_subject_alt_name, nullptr, nullptr));
  if (!names) return 0;
  const size_t n = static_cast<size_t>(sk_GENERAL_NAME_num(names));
  GENERAL_NAMES_free(names);
  return n;
}

std::string subject_common_name(X509* cert) {
  char buf[256] = {0};
  const int n = X509_NAME_get_text_by_NID(X509_get_subject_name(cert), NID_commonName, buf,
                                          sizeof(buf) - 1);
  return n > 0 ? std::string(buf, static_cast<size_t>(n)) : std::string();
}

}  // namespace ninjadoh::certs
