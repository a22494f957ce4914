// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace roqlora::unicode {

/// Decodes UTF-8; ill-formed sequences become U+FFFD.
std::u32string decode(std::string_view utf8);
std::string encode(std::u32string_view cps);
std::string encode(char32_t cp);

bool is_alpha(char32_t cp);
bool is_upper(char32_t cp);
bool is_digit(char32_t cp);
bool is_alnum(char32_t cp);
bool is_space(char32_t cp);
/// General category P* (ASCII and Unicode punctuation).
bool is_punct(char32_t cp);
bool is_latin(char32_t cp);

std::string to_lower(std::string_view utf8);
std::string trim(std::string_view utf8);

/// Lowercased maximal runs of alphanumeric code points.
std::vector<std::string> alnum_tokens(std::string_view utf8);
/// Lowercased maximal runs of alphabetic code points.
std::vector<std::string> word_tokens(std::string_view utf8);

}  // namespace roqlora::unicode
