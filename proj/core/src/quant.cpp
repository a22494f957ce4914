// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "roqlora/quant.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "roqlora/errors.hpp"

namespace roqlora::quant {

namespace {

// Normalized N(0,1) quantiles: 7 negative levels at p in linspace(o, 0.5, 8),
// 8 positive levels at p in linspace(o, 0.5, 9), o = 1 - (1/32 + 1/30)/2,
// each divided by ppf(o).
constexpr Nf4Codebook kCodebook{{
    -1.0,
    -0.69619280563234298,
    -0.52507295944650045,
    -0.39491742591990708,
    -0.28444130892108205,
    -0.18477340280045559,
    -0.09104997598578049,
    0.0,
    0.079580314958409087,
    0.16093014438029071,
    0.2461122513474594,
    0.33791513671312789,
    0.44070973186421625,
    0.56261688796998488,
    0.72295664415947336,
    1.0,
}};

constexpr std::uint8_t kZeroIndex = 7;

std::array<double, kNf4Levels - 1> make_midpoints() {
    std::array<double, kNf4Levels - 1> mids{};
    for (std::size_t i = 0; i + 1 < kNf4Levels; ++i) {
        mids[i] = 0.5 * (kCodebook.values[i] + kCodebook.values[i + 1]);
    }
    return mids;
}

std::size_t checked_element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d != 0 && n > SIZE_MAX / d) throw InvalidArgument("tensor shape overflows size_t");
        n *= d;
    }
    return n;
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return a / b + (a % b != 0); }

template <typename T>
QuantizedTensor quantize_impl(std::span<const T> tensor, std::size_t block_size,
                              std::vector<std::size_t> shape) {
    if (block_size == 0) throw InvalidArgument("quantize: block size must be >= 1");
    if (tensor.empty()) throw InvalidArgument("quantize: tensor is empty");
    if (shape.empty()) shape = {tensor.size()};
    if (checked_element_count(shape) != tensor.size()) {
        throw InvalidArgument("quantize: shape does not match element count");
    }

    const std::size_t n = tensor.size();
    const std::size_t blocks = ceil_div(n, block_size);
    const auto& cb = nf4_codebook();

    std::vector<float> scales(blocks);
    std::vector<std::uint8_t> packed(ceil_div(n, 2), 0);

    for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t lo = b * block_size;
        const std::size_t hi = std::min(n, lo + block_size);
        float absmax = 0.0f;
        for (std::size_t i = lo; i < hi; ++i) {
            if (!std::isfinite(static_cast<double>(tensor[i]))) {
                throw InvalidArgument("quantize: non-finite value at index " + std::to_string(i));
            }
            absmax = std::max(absmax, std::abs(static_cast<float>(tensor[i])));
        }
        scales[b] = absmax;
        for (std::size_t i = lo; i < hi; ++i) {
            std::uint8_t code = kZeroIndex;
            if (absmax > 0.0f) {
                code = cb.nearest(static_cast<double>(static_cast<float>(tensor[i])) /
                                  static_cast<double>(absmax));
            }
            packed[i / 2] |= static_cast<std::uint8_t>((i % 2 == 0) ? code : (code << 4));
        }
    }
    return QuantizedTensor::from_packed(std::move(shape), block_size, std::move(packed),
                                        std::move(scales));
}

}  // namespace

std::uint8_t Nf4Codebook::zero_index() const noexcept {
    const auto it = std::find(values.begin(), values.end(), 0.0);
    return static_cast<std::uint8_t>(it - values.begin());
}

double Nf4Codebook::max_gap() const noexcept {
    double gap = 0.0;
    for (std::size_t i = 0; i + 1 < values.size(); ++i) gap = std::max(gap, values[i + 1] - values[i]);
    return gap;
}

std::uint8_t Nf4Codebook::nearest(double normalized) const noexcept {
    static const auto mids = make_midpoints();
    // Index of the first midpoint >= normalized; a value sitting exactly on a
    // midpoint therefore maps to the lower level.
    std::size_t idx = static_cast<std::size_t>(
        std::lower_bound(mids.begin(), mids.end(), normalized) - mids.begin());
    // Settle rounding disagreements between the midpoint and distance forms.
    auto dist = [&](std::size_t k) { return std::abs(normalized - values[k]); };
    if (idx > 0 && !(dist(idx) < dist(idx - 1))) --idx;
    else if (idx + 1 < values.size() && dist(idx + 1) < dist(idx)) ++idx;
    return static_cast<std::uint8_t>(idx);
}

const Nf4Codebook& nf4_codebook() noexcept { return kCodebook; }

// ---------------------------------------------------------------------------
// Double quantization

double DqScales::restore(std::size_t i) const {
    if (i >= codes_.size()) throw InvalidArgument("DqScales::restore: index out of range");
    const double lo = anchor_;
    const double range = static_cast<double>(upper_[i / block_size_]) - lo;
    return lo + range * static_cast<double>(codes_[i]) / 255.0;
}

std::vector<double> DqScales::restore() const {
    std::vector<double> out(codes_.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = restore(i);
    return out;
}

DqScales DqScales::from_parts(std::size_t block_size, float anchor,
                              std::vector<std::uint8_t> codes, std::vector<float> upper) {
    if (block_size == 0) throw FormatError("DqScales: block size is 0");
    if (upper.size() != ceil_div(codes.size(), block_size)) {
        throw FormatError("DqScales: expected " + std::to_string(ceil_div(codes.size(), block_size)) +
                          " second-level constants, found " + std::to_string(upper.size()));
    }
    if (!std::isfinite(anchor) || anchor < 0.0f) throw FormatError("DqScales: invalid anchor");
    for (float u : upper) {
        if (!std::isfinite(u) || u < anchor) throw FormatError("DqScales: invalid block constant");
    }
    DqScales dq;
    dq.block_size_ = block_size;
    dq.anchor_ = anchor;
    dq.codes_ = std::move(codes);
    dq.upper_ = std::move(upper);
    return dq;
}

DqScales double_quantize(std::span<const float> scales, std::size_t block_size) {
    if (block_size == 0) throw InvalidArgument("double_quantize: block size must be >= 1");
    for (std::size_t i = 0; i < scales.size(); ++i) {
        if (!std::isfinite(scales[i])) {
            throw InvalidArgument("double_quantize: non-finite scale at index " + std::to_string(i));
        }
        if (scales[i] < 0.0f) {
            throw InvalidArgument("double_quantize: negative scale at index " + std::to_string(i));
        }
    }

    DqScales dq;
    dq.block_size_ = block_size;
    dq.anchor_ = scales.empty() ? 0.0f : *std::min_element(scales.begin(), scales.end());
    dq.codes_.resize(scales.size());
    dq.upper_.resize(ceil_div(scales.size(), block_size));

    for (std::size_t b = 0; b < dq.upper_.size(); ++b) {
        const std::size_t lo = b * block_size;
        const std::size_t hi = std::min(scales.size(), lo + block_size);
        const float upper = *std::max_element(scales.begin() + lo, scales.begin() + hi);
        dq.upper_[b] = upper;
        const double range = static_cast<double>(upper) - dq.anchor_;
        for (std::size_t i = lo; i < hi; ++i) {
            double q = 0.0;
            if (range > 0.0) q = std::round(255.0 * (scales[i] - static_cast<double>(dq.anchor_)) / range);
            dq.codes_[i] = static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
        }
    }
    return dq;
}

// ---------------------------------------------------------------------------
// QuantizedTensor

std::size_t QuantizedTensor::block_count() const noexcept {
    return block_size_ == 0 ? 0 : ceil_div(element_count_, block_size_);
}

std::uint8_t QuantizedTensor::code(std::size_t i) const {
    if (i >= element_count_) throw InvalidArgument("QuantizedTensor::code: index out of range");
    const std::uint8_t byte = packed_[i / 2];
    return (i % 2 == 0) ? (byte & 0x0F) : (byte >> 4);
}

double QuantizedTensor::scale(std::size_t block) const {
    if (block >= block_count()) throw InvalidArgument("QuantizedTensor::scale: block out of range");
    if (const auto* plain = std::get_if<std::vector<float>>(&scales_)) return (*plain)[block];
    return std::get<DqScales>(scales_).restore(block);
}

QuantizedTensor QuantizedTensor::with_double_quantization(std::size_t dq_block_size) const {
    const auto* plain = std::get_if<std::vector<float>>(&scales_);
    if (plain == nullptr) throw InvalidArgument("tensor is already double-quantized");
    QuantizedTensor out = *this;
    out.scales_ = double_quantize(*plain, dq_block_size);
    return out;
}

void QuantizedTensor::validate() const {
    if (block_size_ == 0) throw FormatError("QuantizedTensor: block size is 0");
    if (checked_element_count(shape_) != element_count_) {
        throw FormatError("QuantizedTensor: shape does not match element count");
    }
    if (packed_.size() != ceil_div(element_count_, 2)) {
        throw FormatError("QuantizedTensor: packed code buffer has " + std::to_string(packed_.size()) +
                          " bytes, expected " + std::to_string(ceil_div(element_count_, 2)));
    }
    if (element_count_ % 2 == 1 && (packed_.back() >> 4) != 0) {
        throw FormatError("QuantizedTensor: nonzero padding nibble");
    }
    const std::size_t blocks = block_count();
    if (const auto* plain = std::get_if<std::vector<float>>(&scales_)) {
        if (plain->size() != blocks) {
            throw FormatError("QuantizedTensor: " + std::to_string(plain->size()) + " scales for " +
                              std::to_string(blocks) + " blocks");
        }
        for (float s : *plain) {
            if (!std::isfinite(s) || s < 0.0f) throw FormatError("QuantizedTensor: invalid scale");
        }
    } else if (std::get<DqScales>(scales_).size() != blocks) {
        throw FormatError("QuantizedTensor: double-quantized scale count does not match blocks");
    }
}

QuantizedTensor QuantizedTensor::from_codes(std::vector<std::size_t> shape, std::size_t block_size,
                                            std::span<const std::uint8_t> codes, Scales scales) {
    std::vector<std::uint8_t> packed(ceil_div(codes.size(), 2), 0);
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (codes[i] > 15) {
            throw FormatError("QuantizedTensor: code " + std::to_string(codes[i]) + " at index " +
                              std::to_string(i) + " exceeds 15");
        }
        packed[i / 2] |= static_cast<std::uint8_t>((i % 2 == 0) ? codes[i] : (codes[i] << 4));
    }
    if (shape.empty()) shape = {codes.size()};
    return from_packed(std::move(shape), block_size, std::move(packed), std::move(scales));
}

QuantizedTensor QuantizedTensor::from_packed(std::vector<std::size_t> shape, std::size_t block_size,
                                             std::vector<std::uint8_t> packed, Scales scales) {
    QuantizedTensor qt;
    qt.element_count_ = checked_element_count(shape);
    qt.shape_ = std::move(shape);
    qt.block_size_ = block_size;
    qt.packed_ = std::move(packed);
    qt.scales_ = std::move(scales);
    qt.validate();
    return qt;
}

QuantizedTensor quantize(std::span<const float> tensor, std::size_t block_size,
                         std::vector<std::size_t> shape) {
    return quantize_impl(tensor, block_size, std::move(shape));
}

QuantizedTensor quantize(std::span<const double> tensor, std::size_t block_size,
                         std::vector<std::size_t> shape) {
    return quantize_impl(tensor, block_size, std::move(shape));
}

void dequantize_range(const QuantizedTensor& qt, std::size_t first, std::span<double> out) {
    if (first > qt.element_count() || out.size() > qt.element_count() - first) {
        throw InvalidArgument("dequantize_range: range exceeds tensor");
    }
    const auto& cb = nf4_codebook();
    const std::size_t bs = qt.block_size();
    std::size_t i = first;
    while (i < first + out.size()) {
        const std::size_t block = i / bs;
        const double s = qt.scale(block);
        const std::size_t stop = std::min(first + out.size(), (block + 1) * bs);
        for (; i < stop; ++i) out[i - first] = cb.values[qt.code(i)] * s;
    }
}

std::vector<double> dequantize(const QuantizedTensor& qt) {
    std::vector<double> out(qt.element_count());
    dequantize_range(qt, 0, out);
    return out;
}

// ---------------------------------------------------------------------------
// Memory accounting

double bits_per_param(std::size_t block_size, std::optional<DqParams> dq) {
    if (block_size == 0) throw InvalidArgument("bits_per_param: block size must be >= 1");
    const double b1 = static_cast<double>(block_size);
    if (!dq) return 4.0 + 32.0 / b1;
    if (dq->block_size == 0) throw InvalidArgument("bits_per_param: DQ block size must be >= 1");
    return 4.0 + 8.0 / b1 + dq->constant_bits / (b1 * static_cast<double>(dq->block_size));
}

FootprintModel FootprintModel::fp16(double params) {
    return FootprintModel{params, 0.0, 16.0, 0.0};
}

FootprintModel FootprintModel::nf4(double params, double embed_params, std::size_t block_size,
                                   std::optional<DqParams> dq) {
    return FootprintModel{params, embed_params, 4.0, bits_per_param(block_size, dq) - 4.0};
}

double footprint_bytes(const FootprintModel& model) {
    if (model.param_count < 0 || model.embed_param_count < 0 ||
        model.embed_param_count > model.param_count) {
        throw InvalidArgument("footprint: counts must satisfy 0 <= embed <= params");
    }
    const double quantized = model.param_count - model.embed_param_count;
    const double bits = quantized * (model.base_bits_per_param + model.overhead_bits_per_param) +
                        model.embed_param_count * 16.0;
    return bits / 8.0;
}

}  // namespace roqlora::quant
