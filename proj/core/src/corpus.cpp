// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "roqlora/corpus.hpp"

#include "roqlora/errors.hpp"
#include "roqlora/unicode.hpp"

namespace roqlora::corpus {

namespace {

bool is_terminator(char32_t c) { return c == U'.' || c == U'!' || c == U'?' || c == U'…'; }

bool is_closing(char32_t c) {
    switch (c) {
        case U'"': case U'\'': case U')': case U']': case U'”': case U'’': case U'»':
            return true;
        default:
            return false;
    }
}

bool is_opening(char32_t c) {
    switch (c) {
        case U'"': case U'\'': case U'(': case U'[': case U'„': case U'“': case U'‘':
        case U'«': case U'—': case U'–':
            return true;
        default:
            return false;
    }
}

bool starts_sentence(char32_t c) { return unicode::is_upper(c) || unicode::is_digit(c) || is_opening(c); }

}  // namespace

const std::set<std::string>& SentenceSplitter::default_abbreviations() {
    static const std::set<std::string> kAbbrev = {
        // titles and forms of address
        "dl", "dna", "d-l", "d-na", "d-ra", "dra", "dr", "prof", "conf", "lect", "asist", "ing", "av",
        "ec", "gen", "col", "lt", "mr", "mrs", "ms", "jr", "sr", "sf", "st", "pr",
        // addresses and administrative units
        "nr", "str", "bd", "bdul", "bld", "sos", "șos", "şos", "ap", "sc", "et", "jud", "mun", "com",
        // references
        "art", "alin", "lit", "pct", "cap", "fig", "tab", "vol", "ed", "pag", "pp", "op", "cit", "ibid",
        "cf", "vs", "ex", "resp", "tel", "aprox", "cca", "mil", "mld",
        // months
        "ian", "feb", "mar", "apr", "iun", "iul", "aug", "sep", "sept", "oct", "nov", "noi", "dec",
        // multi-part
        "ș.a", "ş.a", "ș.a.m.d", "ş.a.m.d", "i.e", "e.g", "a.c", "d.p.d.v", "î.e.n", "d.hr", "î.hr",
    };
    return kAbbrev;
}

SentenceSplitter::SentenceSplitter() : abbreviations_(default_abbreviations()) {}

SentenceSplitter::SentenceSplitter(std::set<std::string> abbreviations)
    : abbreviations_(std::move(abbreviations)) {}

std::vector<std::string> SentenceSplitter::split(std::string_view text) const {
    const std::u32string cps = unicode::decode(text);
    const std::size_t n = cps.size();
    std::vector<std::string> out;

    auto emit = [&](std::size_t b, std::size_t e) {
        std::string s = unicode::trim(unicode::encode(std::u32string_view(cps).substr(b, e - b)));
        if (!s.empty()) out.push_back(std::move(s));
    };

    auto abbreviation_before = [&](std::size_t dot) {
        std::size_t w = dot;
        while (w > 0 && !unicode::is_space(cps[w - 1])) --w;
        while (w < dot && is_opening(cps[w])) ++w;
        if (w == dot) return false;
        const std::u32string_view word(cps.data() + w, dot - w);
        if (word.size() == 1 && unicode::is_upper(word[0])) return true;  // initial
        return abbreviations_.count(unicode::to_lower(unicode::encode(word))) != 0;
    };

    std::size_t start = 0;
    std::size_t i = 0;
    while (i < n) {
        if (!is_terminator(cps[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n && is_terminator(cps[j])) ++j;
        const std::size_t run_end = j;
        while (j < n && is_closing(cps[j])) ++j;
        std::size_t k = j;
        while (k < n && unicode::is_space(cps[k])) ++k;
        const bool spaced = k > j;
        const bool single_dot = run_end - i == 1 && cps[i] == U'.';
        if (spaced && k < n && starts_sentence(cps[k]) && !(single_dot && abbreviation_before(i))) {
            emit(start, j);
            start = k;
            i = k;
            continue;
        }
        i = run_end;
    }
    if (start < n) emit(start, n);
    return out;
}

std::vector<SentenceRecord> split_sentences(std::string_view text, const Tokenizer& tokenizer,
                                            const std::string& source_id,
                                            const SentenceSplitter& splitter) {
    std::vector<SentenceRecord> out;
    for (auto& s : splitter.split(text)) {
        const std::size_t tokens = tokenizer.count(s);
        out.push_back(SentenceRecord{std::move(s), source_id, tokens});
    }
    return out;
}

bool is_latin_text(std::string_view text) {
    for (char32_t c : unicode::decode(text)) {
        if (unicode::is_alpha(c) && !unicode::is_latin(c)) return false;
    }
    return true;
}

std::vector<SentenceRecord> latin_filter(std::span<const SentenceRecord> sentences) {
    std::vector<SentenceRecord> kept;
    for (const auto& s : sentences) {
        if (is_latin_text(s.text)) kept.push_back(s);
    }
    return kept;
}

PackPlan plan_packing(std::span<const std::size_t> counts, std::size_t max_tokens,
                      std::size_t separator_cost) {
    if (max_tokens == 0) throw InvalidArgument("plan_packing: max_tokens must be >= 1");
    PackPlan plan;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] >= max_tokens) {
            plan.dropped.push_back(i);
            continue;
        }
        if (!plan.groups.empty() && plan.totals.back() + separator_cost + counts[i] < max_tokens) {
            plan.groups.back().push_back(i);
            plan.totals.back() += separator_cost + counts[i];
        } else {
            plan.groups.push_back({i});
            plan.totals.push_back(counts[i]);
        }
    }
    return plan;
}

PackResult pack_chunks(std::span<const SentenceRecord> sentences, const Tokenizer& tokenizer,
                       std::size_t max_tokens) {
    std::vector<std::size_t> counts;
    counts.reserve(sentences.size());
    for (const auto& s : sentences) counts.push_back(s.token_count);
    const PackPlan plan = plan_packing(counts, max_tokens, tokenizer.count(" "));

    PackResult result;
    result.dropped = plan.dropped.size();
    for (std::size_t g = 0; g < plan.groups.size(); ++g) {
        Chunk chunk;
        for (std::size_t idx : plan.groups[g]) {
            if (!chunk.text.empty()) chunk.text += ' ';
            chunk.text += sentences[idx].text;
        }
        chunk.token_count = plan.totals[g];
        chunk.sentence_count = plan.groups[g].size();
        result.chunks.push_back(std::move(chunk));
    }
    return result;
}

CorpusPipeline::CorpusPipeline(const Tokenizer& tokenizer, std::size_t max_tokens, SentenceSplitter splitter)
    : tokenizer_(tokenizer), max_tokens_(max_tokens), splitter_(std::move(splitter)) {}

void CorpusPipeline::add_document(const std::string& id, std::string_view text, const Sink& sink) {
    ++stats_.documents;
    const auto sentences = split_sentences(text, tokenizer_, id, splitter_);
    const auto kept = latin_filter(sentences);
    stats_.sentences += sentences.size();
    stats_.kept += kept.size();
    stats_.removed += sentences.size() - kept.size();

    const auto packed = pack_chunks(kept, tokenizer_, max_tokens_);
    stats_.dropped_oversize += packed.dropped;
    stats_.kept -= packed.dropped;
    for (const auto& chunk : packed.chunks) {
        ++stats_.chunks;
        stats_.chunk_tokens += chunk.token_count;
        sink(chunk);
    }
}

}  // namespace roqlora::corpus
