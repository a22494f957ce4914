// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "roqlora/errors.hpp"
#include "roqlora/quant.hpp"

using namespace roqlora;
using namespace roqlora::quant;

TEST_SUITE("quant") {

TEST_CASE("codebook shape") {
    const auto& cb = nf4_codebook();
    CHECK(cb.values.size() == 16);
    CHECK(cb.values.front() == -1.0);
    CHECK(cb.values.back() == 1.0);
    CHECK(cb.values[cb.zero_index()] == 0.0);
    for (std::size_t i = 1; i < 16; ++i) CHECK(cb.values[i] > cb.values[i - 1]);
}

TEST_CASE("codebook matches the quantile construction") {
    const auto ref = oracle::nf4_levels();
    const auto& cb = nf4_codebook();
    for (std::size_t i = 0; i < 16; ++i) CHECK(cb.values[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("nearest breaks ties toward the lower index") {
    const auto& cb = nf4_codebook();
    for (std::uint8_t i = 0; i + 1 < 16; ++i) {
        const double mid = 0.5 * (cb.values[i] + cb.values[i + 1]);
        const auto k = cb.nearest(mid);
        CHECK((k == i || (k == i + 1 && std::abs(mid - cb.values[i + 1]) < std::abs(mid - cb.values[i]))));
        CHECK(cb.nearest(cb.values[i]) == i);
    }
    CHECK(cb.nearest(-5.0) == 0);
    CHECK(cb.nearest(5.0) == 15);
}

TEST_CASE("all-zero block") {
    const std::vector<float> x(4, 0.0f);
    const auto qt = quantize(std::span<const float>(x), 4);
    CHECK(qt.scale(0) == 0.0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(qt.code(i) == nf4_codebook().zero_index());
    for (const double v : dequantize(qt)) CHECK(v == 0.0);
}

TEST_CASE("extremes are exact levels") {
    const std::vector<float> x{-2.0f, 1.0f, 2.0f};
    const auto qt = quantize(std::span<const float>(x), 3);
    CHECK(qt.scale(0) == 2.0);
    const auto ref = oracle::scalar_quantize(x, 3, oracle::nf4_levels());
    const auto y = dequantize(qt);
    CHECK(y[0] == -2.0);
    CHECK(y[2] == 2.0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(qt.code(i) == ref.codes[i]);
}

TEST_CASE("single block of +1 codes dequantizes to the scale") {
    const std::vector<std::uint8_t> codes(5, 15);
    const auto qt = QuantizedTensor::from_codes({5}, 8, codes, std::vector<float>{2.0f});
    for (const double v : dequantize(qt)) CHECK(v == 2.0);
}

TEST_CASE("roundtrip bound and scalar oracle on a 4096-element tensor") {
    std::mt19937_64 rng(11);
    std::normal_distribution<float> dist(0.0f, 0.7f);
    std::vector<float> x(4096);
    for (auto& v : x) v = dist(rng);
    const auto qt = quantize(std::span<const float>(x), 64);
    const auto y = dequantize(qt);
    const auto ref = oracle::scalar_quantize(x, 64, oracle::nf4_levels());
    const double half_gap = nf4_codebook().max_gap() / 2;
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(std::abs(x[i] - y[i]) <= qt.scale(i / 64) * half_gap * (1 + 1e-12));
        CHECK(qt.code(i) == ref.codes[i]);
    }
    CHECK(qt.packed_codes().size() == 2048);
}

TEST_CASE("packed storage is ceil(N/2) bytes") {
    for (std::size_t n : {1u, 2u, 3u, 63u, 64u, 65u}) {
        const std::vector<float> x(n, 1.5f);
        CHECK(quantize(std::span<const float>(x), 16).packed_codes().size() == (n + 1) / 2);
    }
}

TEST_CASE("block count is ceil(N / b1)") {
    const std::vector<float> x(130, 0.25f);
    CHECK(quantize(std::span<const float>(x), 64).block_count() == 3);
}

TEST_CASE("levels are fixed points") {
    const auto& cb = nf4_codebook();
    std::vector<float> x;
    for (const double v : cb.values) x.push_back(static_cast<float>(3.0 * v));
    const auto qt = quantize(std::span<const float>(x), 16);
    const auto y = dequantize(qt);
    for (std::size_t i = 0; i < 16; ++i) {
        CHECK(qt.code(i) == i);
        CHECK(y[i] == cb.values[i] * 3.0);
    }
}

TEST_CASE("codes are invariant under power-of-two scaling") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> dist(-3.0f, 3.0f);
    std::vector<float> x(1000);
    for (auto& v : x) v = dist(rng);
    std::vector<float> scaled(x);
    for (auto& v : scaled) v *= 0.125f;
    const auto a = quantize(std::span<const float>(x), 64);
    const auto b = quantize(std::span<const float>(scaled), 64);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(a.code(i) == b.code(i));
}

TEST_CASE("non-finite input names the index") {
    std::vector<float> x{1.0f, 2.0f, NAN, 3.0f};
    try {
        (void)quantize(std::span<const float>(x), 2);
        FAIL("expected an exception");
    } catch (const InvalidArgument& e) {
        CHECK(std::string(e.what()).find('2') != std::string::npos);
    }
    CHECK_THROWS_AS((void)quantize(std::span<const float>(x), 0), InvalidArgument);
}

TEST_CASE("corrupt codes are structural errors") {
    const std::vector<std::uint8_t> codes{1, 16};
    CHECK_THROWS_AS((void)QuantizedTensor::from_codes({2}, 2, codes, std::vector<float>{1.0f}), FormatError);
    CHECK_THROWS_AS((void)QuantizedTensor::from_packed({3}, 4, {0x21, 0xF3}, std::vector<float>{1.0f}), FormatError);
    CHECK_THROWS_AS((void)QuantizedTensor::from_packed({4}, 4, {0x21}, std::vector<float>{1.0f}), FormatError);
}

TEST_CASE("dequantize_range agrees with dequantize") {
    std::vector<float> x(300);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(static_cast<float>(i));
    const auto qt = quantize(std::span<const float>(x), 64);
    const auto full = dequantize(qt);
    std::vector<double> part(100);
    dequantize_range(qt, 77, part);
    for (std::size_t i = 0; i < part.size(); ++i) CHECK(part[i] == full[77 + i]);
}

TEST_CASE("double quantization examples") {
    const std::vector<float> constant(256, 5.0f);
    const auto c = double_quantize(constant, 256);
    for (const double v : c.restore()) CHECK(v == 5.0);

    const std::vector<float> ends{0.0f, 255.0f};
    const auto e = double_quantize(ends, 2);
    CHECK(e.restore(0) == 0.0);
    CHECK(e.restore(1) == 255.0);
}

TEST_CASE("double quantization matches the affine oracle") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    std::vector<float> scales(256);
    for (auto& s : scales) s = dist(rng);
    const auto dq = double_quantize(scales, 256);
    const double lo = *std::min_element(scales.begin(), scales.end());
    const double hi = *std::max_element(scales.begin(), scales.end());
    for (std::size_t i = 0; i < scales.size(); ++i) {
        CHECK(dq.restore(i) == doctest::Approx(oracle::affine8_roundtrip(scales[i], lo, hi)).epsilon(1e-6));
        CHECK(std::abs(dq.restore(i) - scales[i]) <= (hi - lo) / 255 / 2 * (1 + 1e-6));
    }
}

TEST_CASE("double quantization is exact on equally spaced values") {
    std::vector<float> scales;
    for (int i = 0; i < 256; ++i) scales.push_back(static_cast<float>(i) * 0.5f);
    const auto dq = double_quantize(scales, 256);
    for (std::size_t i = 0; i < scales.size(); ++i) CHECK(dq.restore(i) == doctest::Approx(scales[i]).epsilon(1e-7));
}

TEST_CASE("multi-block double quantization error bound") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<float> dist(0.01f, 2.0f);
    std::vector<float> scales(1000);
    for (auto& s : scales) s = dist(rng);
    const auto dq = double_quantize(scales, 256);
    CHECK(dq.block_count() == 4);
    for (std::size_t i = 0; i < scales.size(); ++i) {
        const double range = dq.upper()[i / 256] - dq.anchor();
        CHECK(std::abs(dq.restore(i) - scales[i]) <= range / 510 * (1 + 1e-5));
    }
}

TEST_CASE("quantized tensor with double-quantized scales stays within bound") {
    std::mt19937_64 rng(23);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    std::vector<float> x(64 * 300);
    for (auto& v : x) v = dist(rng);
    const auto plain = quantize(std::span<const float>(x), 64);
    const auto dq = plain.with_double_quantization(256);
    CHECK(dq.double_quantized());
    const auto y = dequantize(dq);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = dq.scale(i / 64);
        CHECK(std::abs(y[i] - nf4_codebook().values[plain.code(i)] * s) <= 1e-12 * (1 + s));
    }
}

TEST_CASE("bits per parameter") {
    CHECK(bits_per_param(64) == 4.5);
    CHECK(bits_per_param(32) == 5.0);
    const double dq = bits_per_param(64, DqParams{256, 32});
    CHECK(dq - 4 >= 0.1269);
    CHECK(dq - 4 <= 0.1270);
}

TEST_CASE("footprint") {
    CHECK(to_gigabytes(footprint_bytes(FootprintModel::fp16(6.74e9))) == doctest::Approx(13.48));
    const double nf4 = to_gigabytes(footprint_bytes(FootprintModel::nf4(6.74e9, 0.26e9)));
    CHECK(std::abs(nf4 - 4.7) / 4.7 <= 0.15);
    CHECK(footprint_bytes(FootprintModel::fp16(0)) == 0.0);
    CHECK_THROWS_AS((void)footprint_bytes(FootprintModel::nf4(1.0, 2.0)), InvalidArgument);
}

}  // TEST_SUITE
