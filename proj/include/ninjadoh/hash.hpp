#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace ninjadoh {

std::array<uint8_t, 32> sha256(std::string_view bytes);
std::string sha256_hex(std::string_view bytes);
std::string to_hex(const uint8_t* data, size_t len);

}  // namespace ninjadoh
