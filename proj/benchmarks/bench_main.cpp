// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <benchmark/benchmark.h>

#include <random>

#include "roqlora/lora.hpp"
#include "roqlora/metrics.hpp"
#include "roqlora/quant.hpp"
#include "roqlora/tinylm.hpp"

using namespace roqlora;

namespace {

std::vector<float> normal_tensor(std::size_t n) {
    std::mt19937_64 rng(1);
    std::normal_distribution<float> d(0.0f, 0.02f);
    std::vector<float> x(n);
    for (auto& v : x) v = d(rng);
    return x;
}

void BM_Quantize(benchmark::State& state) {
    const auto x = normal_tensor(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(quant::quantize(std::span<const float>(x), 64));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Quantize)->Arg(1 << 12)->Arg(1 << 20);

void BM_Dequantize(benchmark::State& state) {
    const auto x = normal_tensor(static_cast<std::size_t>(state.range(0)));
    auto qt = quant::quantize(std::span<const float>(x), 64);
    if (state.range(1)) qt = qt.with_double_quantization(256);
    std::vector<double> out(x.size());
    for (auto _ : state) {
        quant::dequantize_range(qt, 0, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Dequantize)->Args({1 << 20, 0})->Args({1 << 20, 1});

void BM_AdaptedForward(benchmark::State& state) {
    const auto d = static_cast<std::size_t>(state.range(0));
    lora::Rng rng(2);
    lora::Matrix w = lora::Matrix::Random(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)) * 0.02;
    lora::AdaptedLinear layer(w, d, d);
    layer.attach(lora::init_adapter(d, d, lora::AdapterConfig{16, 32, 0.0, {}}, 3));
    if (state.range(1)) layer.quantize_base(64);
    const lora::Matrix x = lora::Matrix::Random(64, static_cast<Eigen::Index>(d));
    for (auto _ : state) benchmark::DoNotOptimize(layer.forward(x, lora::Mode::Eval));
}
BENCHMARK(BM_AdaptedForward)->Args({256, 0})->Args({256, 1});

void BM_RougeL(benchmark::State& state) {
    std::vector<std::string> a, b;
    for (int i = 0; i < state.range(0); ++i) {
        a.push_back("w" + std::to_string(i % 37));
        b.push_back("w" + std::to_string(i % 41));
    }
    for (auto _ : state) benchmark::DoNotOptimize(metrics::rouge_scores(a, b));
}
BENCHMARK(BM_RougeL)->Arg(128)->Arg(1024);

void BM_TinyLmForward(benchmark::State& state) {
    tinylm::ModelConfig c;
    auto model = tinylm::TinyLm::init(c, 4);
    model.quantize_base(64);
    model.attach_adapters(lora::AdapterConfig{8, 16, 0.0, {}}, 5);
    std::vector<int> tokens(static_cast<std::size_t>(state.range(0)));
    for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = static_cast<int>(i % 256);
    for (auto _ : state) benchmark::DoNotOptimize(model.forward(tokens));
}
BENCHMARK(BM_TinyLmForward)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
