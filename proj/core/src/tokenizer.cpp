// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "roqlora/tokenizer.hpp"

#include <fstream>

#include "roqlora/errors.hpp"

namespace roqlora {

std::vector<int> ByteTokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(c);
    return ids;
}

std::string ByteTokenizer::decode(std::span<const int> ids) const {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
    }
    return out;
}

VocabTokenizer::VocabTokenizer(std::vector<std::string> pieces) : pieces_(std::move(pieces)) {
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
        if (pieces_[i].empty()) throw InvalidArgument("vocabulary contains an empty piece");
        ids_.emplace(pieces_[i], static_cast<int>(260 + i));
        longest_ = std::max(longest_, pieces_[i].size());
    }
}

VocabTokenizer VocabTokenizer::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open vocabulary '" + path.string() + "'");
    std::vector<std::string> pieces;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) pieces.push_back(line);
    }
    return VocabTokenizer(std::move(pieces));
}

std::vector<int> VocabTokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    std::size_t i = 0;
    while (i < text.size()) {
        int id = static_cast<unsigned char>(text[i]);
        std::size_t len = 1;
        for (std::size_t n = std::min(longest_, text.size() - i); n > 1; --n) {
            auto it = ids_.find(std::string(text.substr(i, n)));
            if (it != ids_.end()) {
                id = it->second;
                len = n;
                break;
            }
        }
        ids.push_back(id);
        i += len;
    }
    return ids;
}

std::string VocabTokenizer::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
        if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
        else if (id >= 260 && static_cast<std::size_t>(id - 260) < pieces_.size()) out += pieces_[id - 260];
    }
    return out;
}

std::unique_ptr<Tokenizer> make_tokenizer(const std::filesystem::path& vocab_path) {
    if (vocab_path.empty()) return std::make_unique<ByteTokenizer>();
    return std::make_unique<VocabTokenizer>(VocabTokenizer::load(vocab_path));
}

}  // namespace roqlora
