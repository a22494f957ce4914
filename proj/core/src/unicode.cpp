// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "roqlora/unicode.hpp"

#include <unicode/uchar.h>
#include <unicode/uscript.h>
#include <unicode/utf8.h>

namespace roqlora::unicode {

std::u32string decode(std::string_view utf8) {
    std::u32string out;
    out.reserve(utf8.size());
    const auto* s = reinterpret_cast<const uint8_t*>(utf8.data());
    const auto len = static_cast<int32_t>(utf8.size());
    int32_t i = 0;
    while (i < len) {
        UChar32 c;
        U8_NEXT(s, i, len, c);
        out.push_back(c < 0 ? U'\uFFFD' : static_cast<char32_t>(c));
    }
    return out;
}

std::string encode(char32_t cp) {
    uint8_t buf[4];
    int32_t n = 0;
    UBool error = false;
    U8_APPEND(buf, n, 4, static_cast<UChar32>(cp), error);
    if (error) return "\xEF\xBF\xBD";
    return std::string(reinterpret_cast<const char*>(buf), static_cast<std::size_t>(n));
}

std::string encode(std::u32string_view cps) {
    std::string out;
    out.reserve(cps.size());
    for (char32_t c : cps) out += encode(c);
    return out;
}

bool is_alpha(char32_t cp) { return u_isalpha(static_cast<UChar32>(cp)); }
bool is_upper(char32_t cp) { return u_isupper(static_cast<UChar32>(cp)) || u_istitle(static_cast<UChar32>(cp)); }
bool is_digit(char32_t cp) { return u_isdigit(static_cast<UChar32>(cp)); }
bool is_alnum(char32_t cp) { return is_alpha(cp) || is_digit(cp); }
bool is_space(char32_t cp) { return u_isUWhiteSpace(static_cast<UChar32>(cp)); }
bool is_punct(char32_t cp) { return u_ispunct(static_cast<UChar32>(cp)); }

bool is_latin(char32_t cp) {
    UErrorCode err = U_ZERO_ERROR;
    return uscript_getScript(static_cast<UChar32>(cp), &err) == USCRIPT_LATIN && U_SUCCESS(err);
}

std::string to_lower(std::string_view utf8) {
    std::u32string cps = decode(utf8);
    for (char32_t& c : cps) c = static_cast<char32_t>(u_tolower(static_cast<UChar32>(c)));
    return encode(cps);
}

std::string trim(std::string_view utf8) {
    const std::u32string cps = decode(utf8);
    std::size_t b = 0, e = cps.size();
    while (b < e && is_space(cps[b])) ++b;
    while (e > b && is_space(cps[e - 1])) --e;
    return encode(std::u32string_view(cps).substr(b, e - b));
}

namespace {

template <typename Pred>
std::vector<std::string> runs(std::string_view utf8, Pred keep) {
    std::vector<std::string> out;
    std::u32string cur;
    for (char32_t c : decode(utf8)) {
        if (keep(c)) {
            cur.push_back(static_cast<char32_t>(u_tolower(static_cast<UChar32>(c))));
        } else if (!cur.empty()) {
            out.push_back(encode(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(encode(cur));
    return out;
}

}  // namespace

std::vector<std::string> alnum_tokens(std::string_view utf8) { return runs(utf8, is_alnum); }
std::vector<std::string> word_tokens(std::string_view utf8) { return runs(utf8, is_alpha); }

}  // namespace roqlora::unicode
