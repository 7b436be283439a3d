#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace ninjadoh {

/// base64url (RFC 4648 §5) without padding — the alphabet both RFC 8484's
/// `dns` parameter and sdns:// stamps use.
std::string base64url_encode(std::string_view bytes);
std::optional<std::string> base64url_decode(std::string_view text);

}  // namespace ninjadoh
