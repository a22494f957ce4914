// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace roqlora {

class Tokenizer {
public:
    virtual ~Tokenizer() = default;

    virtual std::vector<int> encode(std::string_view text) const = 0;
    virtual std::string decode(std::span<const int> ids) const = 0;
    virtual std::size_t vocab_size() const = 0;
    virtual std::string name() const = 0;

    virtual std::size_t count(std::string_view text) const { return encode(text).size(); }

    int bos() const noexcept { return 256; }
    int eos() const noexcept { return 257; }
    int pad() const noexcept { return 258; }
    int unk() const noexcept { return 259; }
};

/// One token per UTF-8 byte, ids 0-255, plus the four specials 256-259.
class ByteTokenizer final : public Tokenizer {
public:
    std::vector<int> encode(std::string_view text) const override;
    std::string decode(std::span<const int> ids) const override;
    std::size_t vocab_size() const override { return 260; }
    std::string name() const override { return "byte"; }
    std::size_t count(std::string_view text) const override { return text.size(); }
};

/// Byte tokenizer extended with multi-byte pieces from a vocabulary file
/// (one UTF-8 piece per line, ids assigned from 260 in file order). Encoding
/// is greedy longest match with byte fallback.
class VocabTokenizer final : public Tokenizer {
public:
    explicit VocabTokenizer(std::vector<std::string> pieces);
    static VocabTokenizer load(const std::filesystem::path& path);

    std::vector<int> encode(std::string_view text) const override;
    std::string decode(std::span<const int> ids) const override;
    std::size_t vocab_size() const override { return 260 + pieces_.size(); }
    std::string name() const override { return "vocab(" + std::to_string(pieces_.size()) + ")"; }

private:
    std::vector<std::string> pieces_;
    std::unordered_map<std::string, int> ids_;
    std::size_t longest_ = 1;
};

/// Byte tokenizer when `vocab_path` is empty, otherwise a VocabTokenizer.
std::unique_ptr<Tokenizer> make_tokenizer(const std::filesystem::path& vocab_path = {});

}  // namespace roqlora
