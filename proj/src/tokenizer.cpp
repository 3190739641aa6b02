#include "icp_audit/tokenizer.hpp"

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "icp_audit/errors.hpp"

namespace icp::mock {

namespace {

std::string to_utf8(const icu::UnicodeString& s) {
  std::string out;
  s.toUTF8String(out);
  return out;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  if (text.empty()) return tokens;

  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");

  auto source = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  icu::UnicodeString normalized = nfc->normalize(source, status);
  if (U_FAILURE(status)) throw Error("NFC normalization failed");

  const int32_t len = normalized.length();
  int32_t i = 0;
  while (i < len) {
    while (i < len && u_isUWhiteSpace(normalized.char32At(i))) i = normalized.moveIndex32(i, 1);
    if (i >= len) break;
    int32_t j = i;
    while (j < len && !u_isUWhiteSpace(normalized.char32At(j))) j = normalized.moveIndex32(j, 1);
    icu::UnicodeString word(normalized, i, j - i);
    std::string raw = to_utf8(word);
    if (raw == kMaskToken)
      tokens.push_back(std::move(raw));
    else
      tokens.push_back(to_utf8(word.toLower(icu::Locale::getRoot())));
    i = j;
  }
  return tokens;
}

}  // namespace icp::mock
