#include "ninjadoh/hash.hpp"

#include <openssl/evp.h>

#include <stdexcept>

namespace ninjadoh {

std::array<uint8_t, 32> sha256(std::string_view bytes) {
  std::array<uint8_t, 32> out{};
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) ||
      len != out.size()) {
    throw std::runtime_error("sha256 digest failed");
  }
  return out;
}

std::string to_hex(const uint8_t* data, size_t len) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (size_t i = 0; i < len; ++i) {
    out.push_back(digits[data[i] >> 4]);
    out.push_back(digits[data[i] & 0xf]);
  }
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  const auto d = sha256(bytes);
  return to_hex(d.data(), d.size());
}

}  // namespace ninjadoh
