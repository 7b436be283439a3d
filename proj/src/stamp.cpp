#include <algorithm>

#include "ninjadoh/base64.hpp"
#include "ninjadoh/client.hpp"

namespace ninjadoh::client {

namespace {

constexpr std::string_view kScheme = "sdns://";

void append_lp(std::string& out, std::string_view field, const char* what) {
  if (field.size() > 255) {
    throw StampError(StampError::Kind::oversized_field,
                     std::string(what) + " exceeds 255 bytes");
  }
  out.push_back(static_cast<char>(field.size()));
  out.append(field.data(), field.size());
}

}  // namespace

void StampData::validate() const {
  if (protocol != kDohStampProtocol) {
    throw StampError(StampError::Kind::unsupported_protocol, "not a DoH stamp");
  }
  if (hashes.size() != 1 || hashes.front().size() != 32) {
    throw StampError(StampError::Kind::malformed, "stamp needs exactly one 32-byte hash");
  }
  if (address.empty()) throw StampError(StampError::Kind::malformed, "stamp address empty");
  core::QueryPath::from_string(path);  // throws std::invalid_argument on bad paths
}

std::string encode_stamp(const StampData& data) {
  data.validate();
  std::string raw;
  raw.push_back(static_cast<char>(data.protocol));
  for (int i = 0; i < 8; ++i) {
    raw.push_back(static_cast<char>((data.properties >> (8 * i)) & 0xff));
  }
  append_lp(raw, data.address, "address");
  if (data.hashes.empty()) {
    raw.push_back('\0');
  } else {
    for (size_t i = 0; i < data.hashes.size(); ++i) {
      const auto& h = data.hashes[i];
      if (h.size() > 0x7f) {
        throw StampError(StampError::Kind::oversized_field, "hash exceeds 127 bytes");
      }
      const uint8_t len = static_cast<uint8_t>(h.size()) |
                          (i + 1 < data.hashes.size() ? 0x80 : 0x00);
      raw.push_back(static_cast<char>(len));
      raw.append(reinterpret_cast<const char*>(h.data()), h.size());
    }
  }
  append_lp(raw, data.hostname, "hostname");
  append_lp(raw, data.path, "path");
  return std::string(kScheme) + base64url_encode(raw);
}

StampData decode_stamp(const std::string& sdns) {
  if (sdns.rfind(kScheme, 0) != 0) {
    throw StampError(StampError::Kind::malformed, "missing sdns:// scheme");
  }
  const auto decoded = base64url_decode(sdns.substr(kScheme.size()));
  if (!decoded) throw StampError(StampError::Kind::malformed, "invalid base64url payload");
  const std::string& raw = *decoded;
  size_t pos = 0;

  auto need = [&](size_t n) {
    if (pos + n > raw.size()) {
      throw StampError(StampError::Kind::malformed, "truncated stamp");
    }
  };
  auto read_lp = [&]() -> std::string {
    need(1);
    const uint8_t len = static_cast<uint8_t>(raw[pos++]);
    need(len);
    std::string out = raw.substr(pos, len);
    pos += len;
    return out;
  };

  need(1);
  StampData data;
  data.protocol = static_cast<uint8_t>(raw[pos++]);
  if (data.protocol != kDohStampProtocol) {
    throw StampError(StampError::Kind::unsupported_protocol,
                     "unsupported stamp protocol " + std::to_string(data.protocol));
  }
  need(8);
  data.properties = 0;
  for (int i = 0; i < 8; ++i) {
    data.properties |= static_cast<uint64_t>(static_cast<uint8_t>(raw[pos++])) << (8 * i);
  }
  data.address = read_lp();

  for (;;) {
    need(1);
    const uint8_t len_byte = static_cast<uint8_t>(raw[pos++]);
    const bool more = (len_byte & 0x80) != 0;
    const size_t len = len_byte & 0x7f;
    need(len);
    if (len > 0 || more) {
      std::vector<uint8_t> h(raw.begin() + static_cast<ptrdiff_t>(pos),
                             raw.begin() + static_cast<ptrdiff_t>(pos + len));
      data.hashes.push_back(std::move(h));
    }
    pos += len;
    if (!more) break;
  }

  data.hostname = read_lp();
  data.path = read_lp();
  if (pos != raw.size()) {
    throw StampError(StampError::Kind::malformed, "trailing bytes after stamp");
  }
  return data;
}

StampData make_stamp(const core::ServiceRecord& record, uint16_t port,
                     const std::array<uint8_t, 32>& ca_digest) {
  StampData data;
  data.address = record.newest_ip().to_string() + ":" + std::to_string(port);
  data.hostname = record.newest_ip().to_string();
  data.path = record.query_path.str();
  data.hashes.emplace_back(ca_digest.begin(), ca_digest.end());
  return data;
}

}  // namespace ninjadoh::client
