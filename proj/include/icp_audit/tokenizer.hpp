#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace icp::mock {

inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kPadToken = "<s>";

/// NFC-normalize, lowercase, split on Unicode whitespace.
///
/// `[MASK]` is kept verbatim (it would otherwise lowercase to `[mask]`).
std::vector<std::string> tokenize(std::string_view text);

}  // namespace icp::mock
