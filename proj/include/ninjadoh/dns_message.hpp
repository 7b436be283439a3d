#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ninjadoh/core.hpp"

namespace ninjadoh::dns {

constexpr uint16_t kTypeA = 1;
constexpr uint16_t kClassIN = 1;

enum class Rcode : uint8_t {
  noerror = 0,
  formerr = 1,
  servfail = 2,
  nxdomain = 3,
};

struct Question {
  std::string name;  // lowercased, no trailing dot
  uint16_t qtype = kTypeA;
  uint16_t qclass = kClassIN;
};

struct Message {
  uint16_t id = 0;
  bool is_response = false;
  Rcode rcode = Rcode::noerror;
  std::vector<Question> questions;
  std::vector<std::pair<std::string, core::IpAddress>> a_records;
};

/// Wire parse covering what the forwarder and tests need: header, question
/// section, and A answers (with compression-pointer support). Returns
/// nullopt on malformed bytes.
std::optional<Message> parse(std::string_view bytes);

std::string build_query(uint16_t id, const std::string& name, uint16_t qtype = kTypeA);

std::string build_a_response(uint16_t id, const Question& question,
                             const std::vector<core::IpAddress>& addresses, uint32_t ttl);

/// Response carrying only an rcode (SERVFAIL/NXDOMAIN/FORMERR); echoes the
/// question when one is available.
std::string build_rcode_response(uint16_t id, const std::optional<Question>& question,
                                 Rcode rcode);

/// Random [a-z0-9] label for cache-busting query prefixes.
std::string random_label(std::mt19937_64& rng, size_t length = 8);

}  // namespace ninjadoh::dns
