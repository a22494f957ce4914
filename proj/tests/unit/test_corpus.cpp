// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <doctest.h>

#include <cctype>
#include <random>

#include "oracles.hpp"
#include "roqlora/corpus.hpp"
#include "roqlora/unicode.hpp"

using namespace roqlora;
using namespace roqlora::corpus;

namespace {

std::string strip_space(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
    }
    return out;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("sentence splitting examples") {
    const SentenceSplitter sp;
    CHECK(sp.split("Ana are mere. Ion are pere.") == std::vector<std::string>{"Ana are mere.", "Ion are pere."});
    CHECK(sp.split("Vizită la nr. 5 azi.").size() == 1);
    CHECK(sp.split("").empty());
    CHECK(sp.split("   ").empty());
    CHECK(sp.split("L-a văzut pe I. Creangă ieri.").size() == 1);
    CHECK(sp.split("Chiar? Da! „Sigur” a zis.").size() == 3);
    CHECK(sp.split("Prețul e 3.5 lei. Bine.").size() == 2);
    CHECK(sp.split("Se termină aici... apoi continuă.").size() == 1);
}

TEST_CASE("sentences reconstruct the input modulo whitespace") {
    const SentenceSplitter sp;
    const std::string text = "Dr. Popescu a venit. A plecat la ora 5! De ce?  Nu ştiu.\nGata.";
    std::string joined;
    for (const auto& s : sp.split(text)) joined += s;
    CHECK(strip_space(joined) == strip_space(text));
}

TEST_CASE("split_sentences carries token counts and source id") {
    ByteTokenizer tok;
    const auto recs = split_sentences("Ana are mere. Ion are pere.", tok, "doc1");
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].source_id == "doc1");
    CHECK(recs[0].token_count == std::string("Ana are mere.").size());
}

TEST_CASE("latin filter") {
    CHECK(is_latin_text("Ştefan cel Mare"));
    CHECK(!is_latin_text("Это текст"));
    CHECK(!is_latin_text("preț 5€ — Москва"));
    CHECK(!is_latin_text("Αθήνα e frumoasă"));
    CHECK(is_latin_text("123 — 45%"));
    ByteTokenizer tok;
    const auto recs = split_sentences("Ana are mere. Это текст. Ion are pere.", tok);
    const auto kept = latin_filter(recs);
    REQUIRE(kept.size() == 2);
    CHECK(kept[1].text == "Ion are pere.");
}

TEST_CASE("packing examples") {
    const std::vector<std::size_t> counts{600, 500, 300};
    const auto plan = plan_packing(counts, 1024, 0);
    REQUIRE(plan.groups.size() == 2);
    CHECK(plan.groups[0] == std::vector<std::size_t>{0});
    CHECK(plan.groups[1] == std::vector<std::size_t>{1, 2});

    const std::vector<std::size_t> edge{1023};
    CHECK(plan_packing(edge, 1024, 1).totals == std::vector<std::size_t>{1023});
    const std::vector<std::size_t> over{1024, 10};
    const auto p = plan_packing(over, 1024, 1);
    CHECK(p.dropped == std::vector<std::size_t>{0});
    CHECK(p.groups.size() == 1);
    CHECK(plan_packing(std::vector<std::size_t>{}, 1024, 1).groups.empty());
}

TEST_CASE("packing agrees with the greedy oracle") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::size_t> counts(std::uniform_int_distribution<std::size_t>(0, 40)(rng));
        for (auto& c : counts) c = std::uniform_int_distribution<std::size_t>(1, 1100)(rng);
        const auto plan = plan_packing(counts, 1024, 1);
        CHECK(plan.groups == oracle::greedy_pack(counts, 1024, 1));
        for (const auto t : plan.totals) CHECK(t < 1024);
    }
}

TEST_CASE("chunks are space-joined and under the limit") {
    ByteTokenizer tok;
    std::string text;
    for (int i = 0; i < 200; ++i) text += "Propoziţia numărul " + std::to_string(i) + " este aici. ";
    const auto recs = split_sentences(text, tok);
    const auto packed = pack_chunks(recs, tok, 256);
    std::size_t sentences = 0;
    for (const auto& c : packed.chunks) {
        CHECK(c.token_count < 256);
        CHECK(c.token_count == tok.count(c.text));
        sentences += c.sentence_count;
    }
    CHECK(sentences == recs.size());
    CHECK(packed.chunks.front().text.rfind("Propoziţia numărul 0 este aici. Propoziţia numărul 1", 0) == 0);
}

TEST_CASE("pipeline on the mixed-script fixture") {
    ByteTokenizer tok;
    CorpusPipeline pipe(tok);
    std::vector<Chunk> chunks;
    pipe.add_document("mixed", oracle::read_text(oracle::source_path("tests/fixtures/mixed_script.txt")),
                      [&](const Chunk& c) { chunks.push_back(c); });
    CHECK(pipe.stats().removed > 0);
    CHECK(pipe.stats().kept > 0);
    CHECK(!chunks.empty());
    for (const auto& c : chunks) {
        CHECK(c.token_count >= 1);
        CHECK(c.token_count < 1024);
        for (const char32_t cp : unicode::decode(c.text)) {
            if (unicode::is_alpha(cp)) CHECK(unicode::is_latin(cp));
        }
    }
}

}  // TEST_SUITE
