// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "roqlora/errors.hpp"
#include "roqlora/tinylm.hpp"
#include "roqlora/tokenizer.hpp"

using namespace roqlora;
using namespace roqlora::tinylm;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.vocab_size = 260;
    c.d_model = 16;
    c.n_heads = 2;
    c.n_layers = 2;
    c.d_ff = 32;
    c.max_seq_len = 32;
    return c;
}

TinyLm adapted_model(std::uint64_t seed, bool quantized, double dropout = 0.0) {
    auto m = TinyLm::init(small_config(), seed);
    if (quantized) m.quantize_base(16);
    lora::AdapterConfig ac{2, 4.0, dropout, {}};
    m.attach_adapters(ac, seed + 1);
    for (auto& [name, layer] : m.adapted_layers()) {
        auto& B = layer->adapter().B;
        for (Eigen::Index i = 0; i < B.size(); ++i) B.data()[i] = 0.05 * std::sin(static_cast<double>(i + 1));
    }
    return m;
}

}  // namespace

TEST_SUITE("tinylm") {

TEST_CASE("config validation") {
    auto c = small_config();
    CHECK_NOTHROW(c.validate());
    c.n_heads = 3;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("logits shape and input checks") {
    const auto m = TinyLm::init(small_config(), 1);
    const std::vector<int> tokens{1, 2, 3, 4, 5};
    const auto logits = m.forward(tokens);
    CHECK(logits.rows() == 5);
    CHECK(logits.cols() == 260);
    CHECK_THROWS_AS((void)m.forward(std::vector<int>{1, 260}), InvalidArgument);
    CHECK_THROWS_AS((void)m.forward(std::vector<int>(33, 1)), InvalidArgument);
}

TEST_CASE("causality: a change at t only affects positions >= t") {
    const auto m = adapted_model(2, true);
    std::vector<int> a{10, 20, 30, 40, 50, 60};
    auto b = a;
    b[3] = 99;
    const auto la = m.forward(a);
    const auto lb = m.forward(b);
    for (int t = 0; t < 3; ++t) CHECK(la.row(t) == lb.row(t));
    for (int t = 3; t < 6; ++t) CHECK(la.row(t) != lb.row(t));
}

TEST_CASE("attention rows sum to one and are causal") {
    const auto m = TinyLm::init(small_config(), 3);
    ForwardCache cache;
    Rng rng(1);
    const std::vector<int> tokens{5, 6, 7, 8};
    m.forward(tokens, Mode::Eval, &rng, &cache);
    for (const auto& block : cache.blocks) {
        for (const auto& p : block.probs) {
            for (Eigen::Index i = 0; i < p.rows(); ++i) {
                CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));
                for (Eigen::Index j = i + 1; j < p.cols(); ++j) CHECK(p(i, j) == 0.0);
            }
        }
    }
}

TEST_CASE("cross entropy") {
    const Matrix uniform = Matrix::Zero(3, 7);
    const std::vector<int> t{0, 3, 6};
    CHECK(cross_entropy(uniform, t) == doctest::Approx(std::log(7.0)));

    Matrix peaked = Matrix::Zero(2, 4);
    peaked(0, 1) = 1e4;
    peaked(1, 2) = 1e4;
    CHECK(cross_entropy(peaked, std::vector<int>{1, 2}) == doctest::Approx(0.0).epsilon(1e-12));

    Matrix logits{{0.1, -0.3, 0.7, 1.2, -1.0}, {0.5, 0.5, -0.2, 0.0, 0.3}, {-0.4, 2.0, 0.1, -0.7, 0.9}};
    const std::vector<int> targets{3, 0, 4};
    const Matrix g = cross_entropy_grad(logits, targets);
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        Matrix up = logits, down = logits;
        up.data()[i] += h;
        down.data()[i] -= h;
        const double fd = (cross_entropy(up, targets) - cross_entropy(down, targets)) / (2 * h);
        CHECK(std::abs(fd - g.data()[i]) <= 1e-4 * std::max(1e-6, std::abs(fd)));
    }
}

TEST_CASE("model backward matches finite differences") {
    auto m = adapted_model(4, true);
    const std::vector<int> tokens{1, 40, 80, 120, 160, 200, 240};
    const std::span<const int> all(tokens);
    const auto inputs = all.first(6);
    const auto targets = all.subspan(1);

    ForwardCache cache;
    Rng rng(0);
    const Matrix logits = m.forward(inputs, Mode::Train, &rng, &cache);
    auto grads = m.zero_gradients();
    m.backward(cross_entropy_grad(logits, targets), cache, grads);

    const auto loss = [&] { return cross_entropy(m.forward(inputs), targets); };
    const double h = 1e-5;
    auto layers = m.adapted_layers();
    double worst = 0;
    for (std::size_t li = 0; li < layers.size(); li += 3) {
        auto& ad = layers[li].second->adapter();
        for (Matrix* p : {&ad.A, &ad.B}) {
            const Matrix& g = p == &ad.A ? grads.layers[li].dA : grads.layers[li].dB;
            for (Eigen::Index i = 0; i < p->size(); i += 5) {
                const double saved = p->data()[i];
                p->data()[i] = saved + h;
                const double up = loss();
                p->data()[i] = saved - h;
                const double down = loss();
                p->data()[i] = saved;
                const double fd = (up - down) / (2 * h);
                worst = std::max(worst, std::abs(fd - g.data()[i]) / std::max(1e-6, std::abs(fd)));
            }
        }
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("frozen checksum ignores adapters") {
    auto m = adapted_model(5, true);
    const auto c = m.frozen_checksum();
    m.adapted_layers().front().second->adapter().A.setOnes();
    CHECK(m.frozen_checksum() == c);
}

TEST_CASE("checkpoint roundtrip") {
    const auto m = adapted_model(6, true, 0.05);
    const auto path = std::filesystem::temp_directory_path() / "roqlora_tinylm_ckpt.qlt";
    m.save(path);
    const auto back = TinyLm::load(path);
    std::filesystem::remove(path);
    const std::vector<int> tokens{3, 1, 4, 1, 5, 9, 2, 6};
    CHECK(back.forward(tokens) == m.forward(tokens));
    CHECK(back.frozen_checksum() == m.frozen_checksum());
    CHECK(back.adapted_layers().size() == m.adapted_layers().size());
    CHECK(back.adapted_layers().front().second->adapter().config.dropout == 0.05);
}

TEST_CASE("nucleus filter") {
    const std::vector<double> p{0.5, 0.3, 0.15, 0.05};
    const auto kept = nucleus_filter(p, 0.9);
    REQUIRE(kept.size() == 3);
    CHECK(kept[0].first == 0);
    CHECK(kept[1].first == 1);
    CHECK(kept[2].first == 2);
    CHECK(kept[0].second == doctest::Approx(0.5 / 0.95));
    CHECK(kept[2].second == doctest::Approx(0.15 / 0.95));
    CHECK(nucleus_filter(p, 1.0).size() == 4);
}

TEST_CASE("sampling: token 3 is never drawn under top-p 0.9") {
    std::vector<double> logits;
    for (const double q : {0.5, 0.3, 0.15, 0.05}) logits.push_back(std::log(q));
    Rng rng(42);
    std::map<int, int> counts;
    for (int i = 0; i < 5000; ++i) ++counts[sample_token(logits, 1.0, 0.9, rng)];
    CHECK(counts.count(3) == 0);
    CHECK(counts[0] > counts[1]);
    CHECK(counts[1] > counts[2]);
}

TEST_CASE("sampling: near-zero temperature is argmax") {
    const std::vector<double> logits{0.1, 2.0, 1.9, -1.0};
    Rng rng(1);
    for (int i = 0; i < 50; ++i) CHECK(sample_token(logits, 0.0, 0.9, rng) == 1);
}

TEST_CASE("generation is seeded and honors the stop sequence") {
    const auto m = adapted_model(7, true);
    ByteTokenizer tok;
    GenerationConfig gen;
    gen.max_new_tokens = 40;
    gen.stop = "e";
    Rng a(3), b(3);
    const auto x = generate(m, tok, "Răspuns:", gen, a);
    const auto y = generate(m, tok, "Răspuns:", gen, b);
    CHECK(x == y);
    CHECK(x.find('e') == std::string::npos);
}

TEST_CASE("generation left-truncates long prompts") {
    const auto m = TinyLm::init(small_config(), 8);
    ByteTokenizer tok;
    GenerationConfig gen;
    gen.max_new_tokens = 3;
    gen.temperature = 0.0;
    Rng rng(0);
    CHECK_NOTHROW((void)generate(m, tok, std::string(100, 'a'), gen, rng));
}

}  // TEST_SUITE
