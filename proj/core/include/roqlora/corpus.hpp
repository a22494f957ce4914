// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "roqlora/tokenizer.hpp"

namespace roqlora::corpus {

inline constexpr std::size_t kMaxChunkTokens = 1024;

struct SentenceRecord {
    std::string text;
    std::string source_id;
    std::size_t token_count = 0;
};

struct Chunk {
    std::string text;
    std::size_t token_count = 0;
    std::size_t sentence_count = 0;
};

/// Rule-based sentence boundary detection. A boundary follows a run of
/// '.', '!', '?' or U+2026 (plus closing quotes/brackets) when whitespace and
/// then an uppercase letter, digit or opening quote come next. A single '.'
/// after a listed abbreviation or a one-letter initial is not a boundary.
class SentenceSplitter {
public:
    SentenceSplitter();  ///< bundled abbreviation list
    explicit SentenceSplitter(std::set<std::string> abbreviations);

    static const std::set<std::string>& default_abbreviations();

    /// Trimmed, non-empty sentences in source order.
    std::vector<std::string> split(std::string_view text) const;

private:
    std::set<std::string> abbreviations_;
};

std::vector<SentenceRecord> split_sentences(std::string_view text, const Tokenizer& tokenizer,
                                            const std::string& source_id = {},
                                            const SentenceSplitter& splitter = SentenceSplitter());

/// True iff every alphabetic code point is in the Latin script.
bool is_latin_text(std::string_view text);

std::vector<SentenceRecord> latin_filter(std::span<const SentenceRecord> sentences);

/// Greedy in-order grouping of token counts. A group's total is the sum of
/// its counts plus `separator_cost` between members and stays < max_tokens.
/// Counts >= max_tokens are skipped and listed in `dropped`.
struct PackPlan {
    std::vector<std::vector<std::size_t>> groups;  ///< indices into the input
    std::vector<std::size_t> totals;
    std::vector<std::size_t> dropped;
};

PackPlan plan_packing(std::span<const std::size_t> counts, std::size_t max_tokens,
                      std::size_t separator_cost);

struct PackResult {
    std::vector<Chunk> chunks;
    std::size_t dropped = 0;
};

/// Space-joins sentences into chunks of fewer than `max_tokens` tokens.
PackResult pack_chunks(std::span<const SentenceRecord> sentences, const Tokenizer& tokenizer,
                       std::size_t max_tokens = kMaxChunkTokens);

struct CorpusStats {
    std::size_t documents = 0;
    std::size_t sentences = 0;
    std::size_t kept = 0;
    std::size_t removed = 0;          ///< non-Latin script
    std::size_t dropped_oversize = 0;
    std::size_t chunks = 0;
    std::size_t chunk_tokens = 0;
};

/// Streaming document -> chunk pipeline: split, filter, pack. Chunks never
/// span documents.
class CorpusPipeline {
public:
    using Sink = std::function<void(const Chunk&)>;

    CorpusPipeline(const Tokenizer& tokenizer, std::size_t max_tokens = kMaxChunkTokens,
                   SentenceSplitter splitter = SentenceSplitter());

    void add_document(const std::string& id, std::string_view text, const Sink& sink);
    const CorpusStats& stats() const noexcept { return stats_; }

private:
    const Tokenizer& tokenizer_;
    std::size_t max_tokens_;
    SentenceSplitter splitter_;
    CorpusStats stats_;
};

}  // namespace roqlora::corpus
