// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "roqlora/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "roqlora/errors.hpp"
#include "roqlora/metrics.hpp"
#include "roqlora/unicode.hpp"

namespace roqlora::analysis {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

std::ifstream open(const std::filesystem::path& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument(std::string("cannot open ") + what + " " + path.string());
    return in;
}

}  // namespace

Stopwords load_stopwords(const std::filesystem::path& path) {
    auto in = open(path, "stopword file");
    Stopwords words;
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const auto word = unicode::to_lower(unicode::trim(line));
        if (!word.empty()) words.insert(word);
    }
    return words;
}

LemmaMap load_lemmas(const std::filesystem::path& path) {
    auto in = open(path, "lemma file");
    LemmaMap lemmas;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw FormatError(path.filename().string() + ":" + std::to_string(line_no) + ": expected form<TAB>lemma");
        const auto form = unicode::to_lower(unicode::trim(line.substr(0, tab)));
        const auto lemma = unicode::to_lower(unicode::trim(line.substr(tab + 1)));
        if (!form.empty() && !lemma.empty()) lemmas[form] = lemma;
    }
    return lemmas;
}

std::vector<TfidfEntry> tfidf_rank(std::span<const std::string> documents, const Stopwords& stopwords,
                                   const LemmaMap& lemmas) {
    if (documents.empty()) throw InvalidArgument("tfidf_rank needs a nonempty corpus");

    std::unordered_map<std::string, std::size_t> counts;
    std::unordered_map<std::string, std::size_t> df;
    std::size_t total = 0;
    for (const auto& doc : documents) {
        std::unordered_set<std::string> seen;
        for (auto& word : unicode::word_tokens(doc)) {
            if (stopwords.count(word)) continue;
            const auto it = lemmas.find(word);
            std::string lemma = it == lemmas.end() ? std::move(word) : it->second;
            if (stopwords.count(lemma)) continue;
            ++counts[lemma];
            ++total;
            if (seen.insert(lemma).second) ++df[lemma];
        }
    }

    const auto n = static_cast<double>(documents.size());
    std::vector<TfidfEntry> out;
    out.reserve(counts.size());
    for (const auto& [lemma, count] : counts) {
        const double tf = static_cast<double>(count) / static_cast<double>(total);
        out.push_back({lemma, tf * std::log(n / static_cast<double>(df[lemma]))});
    }
    std::sort(out.begin(), out.end(), [](const TfidfEntry& a, const TfidfEntry& b) {
        return a.score != b.score ? a.score > b.score : a.word < b.word;
    });
    return out;
}

std::vector<McqItem> load_mcq(const std::filesystem::path& path) {
    auto in = open(path, "dataset");
    std::vector<McqItem> items;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (unicode::trim(line).empty()) continue;
        const auto where = path.filename().string() + ":" + std::to_string(line_no);
        try {
            const auto j = json::parse(line);
            McqItem item;
            item.id = where;
            if (j.contains("id")) item.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
            item.question = j.at("question").get<std::string>();
            item.choices = j.at("choices").get<std::vector<std::string>>();
            const auto& a = j.at("answer");
            item.answer = a.is_string() ? std::stoi(a.get<std::string>()) : a.get<int>();
            if (j.contains("split")) item.split = j["split"].get<std::string>();
            items.push_back(std::move(item));
        } catch (const json::exception& e) {
            throw FormatError(where + ": " + e.what());
        } catch (const std::logic_error&) {
            throw FormatError(where + ": answer is not an integer");
        }
    }
    return items;
}

std::string item_text(const McqItem& item) {
    std::string text = item.question;
    for (std::size_t i = 0; i < item.choices.size(); ++i) {
        text += "\n" + std::to_string(i + 1) + ". " + item.choices[i];
    }
    return text;
}

std::map<int, std::size_t> class_distribution(std::span<const McqItem> items) {
    std::map<int, std::size_t> counts{{1, 0}, {2, 0}, {3, 0}, {4, 0}, {5, 0}};
    for (const auto& item : items) {
        if (item.answer < 1 || item.answer > 5)
            throw InvalidArgument("item " + item.id + ": answer " + std::to_string(item.answer) + " is outside 1..5");
        ++counts[item.answer];
    }
    return counts;
}

double class_balance_ratio(const std::map<int, std::size_t>& counts) {
    if (counts.empty()) return std::numeric_limits<double>::infinity();
    std::size_t lo = std::numeric_limits<std::size_t>::max();
    std::size_t hi = 0;
    for (const auto& [cls, c] : counts) {
        lo = std::min(lo, c);
        hi = std::max(hi, c);
    }
    if (lo == 0) return std::numeric_limits<double>::infinity();
    return static_cast<double>(hi) / static_cast<double>(lo);
}

std::map<std::string, std::size_t> split_sizes(std::span<const McqItem> items) {
    std::map<std::string, std::size_t> sizes;
    for (const auto& item : items) ++sizes[item.split.empty() ? "unspecified" : item.split];
    return sizes;
}

std::size_t LengthHistogram::total() const {
    std::size_t n = 0;
    for (const auto& [lo, c] : counts) n += c;
    return n;
}

LengthHistogram length_distribution(std::span<const McqItem> items, const Tokenizer& tokenizer,
                                    std::size_t bucket_width) {
    if (bucket_width == 0) throw InvalidArgument("bucket width must be positive");
    LengthHistogram h;
    h.bucket_width = bucket_width;
    h.tokenizer = tokenizer.name();
    for (const auto& item : items) {
        const auto n = tokenizer.count(item_text(item));
        ++h.counts[n / bucket_width * bucket_width];
    }
    return h;
}

DatasetStats analyze(std::span<const McqItem> items, const Stopwords& stopwords, const LemmaMap& lemmas,
                     const Tokenizer& tokenizer, std::size_t top_n) {
    DatasetStats stats;
    stats.items = items.size();
    stats.class_counts = class_distribution(items);
    stats.split_sizes = split_sizes(items);
    stats.length_histogram = length_distribution(items, tokenizer);
    if (!items.empty()) {
        std::vector<std::string> docs;
        docs.reserve(items.size());
        for (const auto& item : items) docs.push_back(item_text(item));
        stats.tfidf = tfidf_rank(docs, stopwords, lemmas);
        if (stats.tfidf.size() > top_n) stats.tfidf.resize(top_n);
    }
    return stats;
}

std::string to_json(const DatasetStats& stats) {
    ojson j;
    j["items"] = stats.items;
    ojson tfidf = ojson::array();
    for (const auto& e : stats.tfidf) tfidf.push_back({{"word", e.word}, {"score", metrics::round_to(e.score, 5)}});
    j["tfidf"] = tfidf;
    ojson classes = ojson::object();
    for (const auto& [cls, c] : stats.class_counts) classes[std::to_string(cls)] = c;
    j["class_counts"] = classes;
    const double ratio = class_balance_ratio(stats.class_counts);
    j["class_balance_ratio"] = std::isfinite(ratio) ? ojson(metrics::round_to(ratio, 4)) : ojson();
    ojson splits = ojson::object();
    for (const auto& [name, c] : stats.split_sizes) splits[name] = c;
    j["split_sizes"] = splits;
    ojson hist = ojson::object();
    hist["tokenizer"] = stats.length_histogram.tokenizer;
    hist["bucket_width"] = stats.length_histogram.bucket_width;
    ojson buckets = ojson::array();
    for (const auto& [lo, c] : stats.length_histogram.counts)
        buckets.push_back({{"from", lo}, {"to", lo + stats.length_histogram.bucket_width}, {"count", c}});
    hist["buckets"] = buckets;
    j["length_histogram"] = hist;
    return j.dump(2, ' ', false, ojson::error_handler_t::replace) + "\n";
}

}  // namespace roqlora::analysis
