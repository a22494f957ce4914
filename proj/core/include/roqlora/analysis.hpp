// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "roqlora/tokenizer.hpp"

namespace roqlora::analysis {

struct TfidfEntry {
    std::string word;  ///< lemma
    double score = 0;
};

using Stopwords = std::set<std::string>;
using LemmaMap = std::map<std::string, std::string>;

/// One lowercased word per line; blank lines and '#' comments ignored.
Stopwords load_stopwords(const std::filesystem::path& path);
/// "form<TAB>lemma" per line; forms are lowercased.
LemmaMap load_lemmas(const std::filesystem::path& path);

/// score(w) = count(w) / total lemma tokens * ln(N / df(w)), computed over
/// lowercased alphabetic words with stopwords dropped both before and after
/// lemmatization. Sorted by descending score, ties alphabetical.
/// Throws InvalidArgument on an empty corpus.
std::vector<TfidfEntry> tfidf_rank(std::span<const std::string> documents, const Stopwords& stopwords,
                                   const LemmaMap& lemmas);

/// Multiple-choice record as stored in the RoMedQA JSONL file.
struct McqItem {
    std::string id;
    std::string question;
    std::vector<std::string> choices;
    int answer = 0;
    std::string split;  ///< empty when the record has no "split" field
};

/// Answers are read as-is; range checks belong to class_distribution.
std::vector<McqItem> load_mcq(const std::filesystem::path& path);

/// Question followed by the numbered choices, one per line.
std::string item_text(const McqItem& item);

/// Count per answer index 1..5. Throws InvalidArgument naming the first item
/// whose answer is out of range.
std::map<int, std::size_t> class_distribution(std::span<const McqItem> items);

/// max / min over the five class counts; infinity when a class is empty.
double class_balance_ratio(const std::map<int, std::size_t>& counts);

std::map<std::string, std::size_t> split_sizes(std::span<const McqItem> items);

struct LengthHistogram {
    std::size_t bucket_width = 16;
    std::map<std::size_t, std::size_t> counts;  ///< bucket lower bound -> items
    std::string tokenizer;

    std::size_t total() const;
};

LengthHistogram length_distribution(std::span<const McqItem> items, const Tokenizer& tokenizer,
                                    std::size_t bucket_width = 16);

struct DatasetStats {
    std::vector<TfidfEntry> tfidf;  ///< top-N
    std::map<int, std::size_t> class_counts;
    std::map<std::string, std::size_t> split_sizes;
    LengthHistogram length_histogram;
    std::size_t items = 0;
};

DatasetStats analyze(std::span<const McqItem> items, const Stopwords& stopwords, const LemmaMap& lemmas,
                     const Tokenizer& tokenizer, std::size_t top_n = 20);

std::string to_json(const DatasetStats& stats);

}  // namespace roqlora::analysis
