#include "ninjadoh/dns_message.hpp"

#include <algorithm>

namespace ninjadoh::dns {

namespace {

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
  put_u16(out, static_cast<uint16_t>(v >> 16));
  put_u16(out, static_cast<uint16_t>(v & 0xffff));
}

bool get_u16(std::string_view b, size_t& pos, uint16_t& v) {
  if (pos + 2 > b.size()) return false;
  v = static_cast<uint16_t>((static_cast<uint8_t>(b[pos]) << 8) | static_cast<uint8_t>(b[pos + 1]));
  pos += 2;
  return true;
}

bool append_name(std::string& out, const std::string& name) {
  if (name.size() > 253) return false;
  size_t start = 0;
  while (start <= name.size()) {
    size_t dot = name.find('.', start);
    if (dot == std::string::npos) dot = name.size();
    const size_t len = dot - start;
    if (len == 0 || len > 63) return false;
    out.push_back(static_cast<char>(len));
    out.append(name, start, len);
    if (dot == name.size()) break;
    start = dot + 1;
  }
  out.push_back('\0');
  return true;
}

// Decompressing name reader with a pointer-hop guard.
bool read_name(std::string_view b, size_t& pos, std::string& name) {
  size_t cursor = pos;
  bool jumped = false;
  int hops = 0;
  name.clear();
  for (;;) {
    if (cursor >= b.size()) return false;
    const uint8_t len = static_cast<uint8_t>(b[cursor]);
    if ((len & 0xc0) == 0xc0) {
      if (cursor + 1 >= b.size() || ++hops > 16) return false;
      const size_t target = ((len & 0x3f) << 8) | static_cast<uint8_t>(b[cursor + 1]);
      if (!jumped) pos = cursor + 2;
      if (target >= cursor) return false;  // pointers must aim backwards
      cursor = target;
      jumped = true;
      continue;
    }
    if (len > 63) return false;
    if (len == 0) {
      if (!jumped) pos = cursor + 1;
      break;
    }
    if (cursor + 1 + len > b.size()) return false;
    if (!name.empty()) name.push_back('.');
    for (size_t i = 0; i < len; ++i) {
      name.push_back(static_cast<char>(tolower(static_cast<unsigned char>(b[cursor + 1 + i]))));
    }
    cursor += 1 + len;
  }
  return name.size() <= 253;
}

std::string build_header(uint16_t id, bool response, Rcode rcode, uint16_t qd, uint16_t an) {
  std::string out;
  put_u16(out, id);
  uint16_t flags = 0;
  if (response) flags |= 0x8000;          // QR
  flags |= 0x0100;                        // RD
  if (response) flags |= 0x0080;          // RA
  flags |= static_cast<uint16_t>(rcode);  // RCODE
  put_u16(out, flags);
  put_u16(out, qd);
  put_u16(out, an);
  put_u16(out, 0);  // NS
  put_u16(out, 0);  // AR
  return out;
}

void append_question(std::string& out, const Question& q) {
  append_name(out, q.name);
  put_u16(out, q.qtype);
  put_u16(out, q.qclass);
}

}  // namespace

std::optional<Message> parse(std::string_view bytes) {
  if (bytes.size() < 12) return std::nullopt;
  size_t pos = 0;
  Message m;
  uint16_t flags = 0, qd = 0, an = 0, ns = 0, ar = 0;
  get_u16(bytes, pos, m.id);
  get_u16(bytes, pos, flags);
  get_u16(bytes, pos, qd);
  get_u16(bytes, pos, an);
  get_u16(bytes, pos, ns);
  get_u16(bytes, pos, ar);
  m.is_response = (flags & 0x8000) != 0;
  m.rcode = static_cast<Rcode>(flags & 0x0f);

  for (uint16_t i = 0; i < qd; ++i) {
    Question q;
    if (!read_name(bytes, pos, q.name)) return std::nullopt;
    if (!get_u16(bytes, pos, q.qtype) || !get_u16(bytes, pos, q.qclass)) return std::nullopt;
    m.questions.push_back(std::move(q));
  }

  const size_t records = static_cast<size_t>(an) + ns + ar;
  for (size_t i = 0; i < records; ++i) {
    std::string name;
    if (!read_name(bytes, pos, name)) return std::nullopt;
    uint16_t rtype = 0, rclass = 0, rdlen = 0;
    if (!get_u16(bytes, pos, rtype) || !get_u16(bytes, pos, rclass)) return std::nullopt;
    pos += 4;  // TTL
    if (!get_u16(bytes, pos, rdlen) || pos + rdlen > bytes.size()) return std::nullopt;
    if (i < an && rtype == kTypeA && rclass == kClassIN && rdlen == 4) {
      const uint32_t v = (static_cast<uint8_t>(bytes[pos]) << 24) |
                         (static_cast<uint8_t>(bytes[pos + 1]) << 16) |
                         (static_cast<uint8_t>(bytes[pos + 2]) << 8) |
                         static_cast<uint8_t>(bytes[pos + 3]);
      if (v != 0) m.a_records.emplace_back(name, core::IpAddress::from_uint32(v));
    }
    pos += rdlen;
  }
  return m;
}

std::string build_query(uint16_t id, const std::string& name, uint16_t qtype) {
  std::string lowered = name;
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(tolower(c)); });
  std::string out = build_header(id, false, Rcode::noerror, 1, 0);
  Question q{lowered, qtype, kClassIN};
  append_question(out, q);
  return out;
}

std::string build_a_response(uint16_t id, const Question& question,
                             const std::vector<core::IpAddress>& addresses, uint32_t ttl) {
  std::string out =
      build_header(id, true, Rcode::noerror, 1, static_cast<uint16_t>(addresses.size()));
  append_question(out, question);
  for (const auto& addr : addresses) {
    put_u16(out, 0xc00c);  // pointer to the question name
    put_u16(out, kTypeA);
    put_u16(out, kClassIN);
    put_u32(out, ttl);
    put_u16(out, 4);
    put_u32(out, addr.value());
  }
  return out;
}

std::string build_rcode_response(uint16_t id, const std::optional<Question>& question,
                                 Rcode rcode) {
  std::string out = build_header(id, true, rcode, question ? 1 : 0, 0);
  if (question) append_question(out, *question);
  return out;
}

std::string random_label(std::mt19937_64& rng, size_t length) {
  static constexpr std::string_view charset = "abcdefghijklmnopqrstuvwxyz0123456789";
  std::uniform_int_distribution<size_t> dist(0, charset.size() - 1);
  std::string out;
  out.reserve(length);
  for (size_t i = 0; i < length; ++i) out.push_back(charset[dist(rng)]);
  return out;
}

}  // namespace ninjadoh::dns
