// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace roqlora::quant {

inline constexpr std::size_t kNf4Levels = 16;
inline constexpr std::size_t kDefaultBlockSize = 64;
inline constexpr std::size_t kDefaultDqBlockSize = 256;

/// The 16 NormalFloat levels: normalized quantiles of N(0, 1), strictly
/// increasing, with exact -1, 0 and +1 entries.
struct Nf4Codebook {
    std::array<double, kNf4Levels> values;

    /// Index of the exact 0.0 level.
    std::uint8_t zero_index() const noexcept;
    /// Largest distance between two adjacent levels.
    double max_gap() const noexcept;
    /// Nearest level to `normalized`; ties resolve to the lower index.
    std::uint8_t nearest(double normalized) const noexcept;
};

const Nf4Codebook& nf4_codebook() noexcept;

/// Second-level (8-bit) quantization of per-block scale constants.
///
/// All scales share one f32 anchor (the minimum over the whole vector); each
/// group of `block_size` scales stores one f32 upper bound. A scale is coded
/// as round(255 * (c - anchor) / (upper - anchor)).
class DqScales {
public:
    DqScales() = default;

    std::size_t block_size() const noexcept { return block_size_; }
    std::size_t size() const noexcept { return codes_.size(); }
    std::size_t block_count() const noexcept { return upper_.size(); }
    float anchor() const noexcept { return anchor_; }

    std::span<const std::uint8_t> codes() const noexcept { return codes_; }
    std::span<const float> upper() const noexcept { return upper_; }

    double restore(std::size_t i) const;
    std::vector<double> restore() const;

    /// Rebuilds from serialized parts; throws FormatError on inconsistency.
    static DqScales from_parts(std::size_t block_size, float anchor,
                               std::vector<std::uint8_t> codes,
                               std::vector<float> upper);

private:
    friend DqScales double_quantize(std::span<const float> scales, std::size_t block_size);

    std::size_t block_size_ = 0;
    float anchor_ = 0.0f;
    std::vector<std::uint8_t> codes_;
    std::vector<float> upper_;
};

/// Throws InvalidArgument if `block_size` is 0 or any scale is negative or
/// non-finite.
DqScales double_quantize(std::span<const float> scales, std::size_t block_size);

/// NF4-coded tensor. Immutable once built.
class QuantizedTensor {
public:
    using Scales = std::variant<std::vector<float>, DqScales>;

    QuantizedTensor() = default;

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t element_count() const noexcept { return element_count_; }
    std::size_t block_size() const noexcept { return block_size_; }
    std::size_t block_count() const noexcept;
    bool double_quantized() const noexcept { return std::holds_alternative<DqScales>(scales_); }

    std::span<const std::uint8_t> packed_codes() const noexcept { return packed_; }
    const Scales& scales() const noexcept { return scales_; }

    std::uint8_t code(std::size_t i) const;
    /// Scale of block `b` as used by dequantization (restored if DQ).
    double scale(std::size_t block) const;

    /// Replaces the f32 scales with their double-quantized form.
    QuantizedTensor with_double_quantization(std::size_t dq_block_size) const;

    /// Builds from one code per element. Codes above 15 are a FormatError.
    static QuantizedTensor from_codes(std::vector<std::size_t> shape, std::size_t block_size,
                                      std::span<const std::uint8_t> codes, Scales scales);
    /// Builds from codes packed two per byte (element 2i in the low nibble).
    static QuantizedTensor from_packed(std::vector<std::size_t> shape, std::size_t block_size,
                                       std::vector<std::uint8_t> packed, Scales scales);

private:
    void validate() const;

    std::vector<std::size_t> shape_;
    std::size_t element_count_ = 0;
    std::size_t block_size_ = 0;
    std::vector<std::uint8_t> packed_;
    Scales scales_;
};

/// Blockwise absmax NF4 quantization of a row-major tensor. A flat tensor
/// is assumed when `shape` is empty.
QuantizedTensor quantize(std::span<const float> tensor, std::size_t block_size,
                         std::vector<std::size_t> shape = {});
QuantizedTensor quantize(std::span<const double> tensor, std::size_t block_size,
                         std::vector<std::size_t> shape = {});

std::vector<double> dequantize(const QuantizedTensor& qt);

/// Decodes elements [first, first + out.size()) into `out`.
void dequantize_range(const QuantizedTensor& qt, std::size_t first, std::span<double> out);

struct DqParams {
    std::size_t block_size = kDefaultDqBlockSize;
    double constant_bits = 32.0;
};

/// Storage cost per parameter: 4 + 32/b1 without DQ, or
/// 4 + 8/b1 + constant_bits/(b1*b2) with DQ.
double bits_per_param(std::size_t block_size, std::optional<DqParams> dq = std::nullopt);

struct FootprintModel {
    double param_count = 0;
    double embed_param_count = 0;  ///< kept at 16 bits
    double base_bits_per_param = 16;
    double overhead_bits_per_param = 0;

    static FootprintModel fp16(double params);
    static FootprintModel nf4(double params, double embed_params,
                              std::size_t block_size = kDefaultBlockSize,
                              std::optional<DqParams> dq = std::nullopt);
};

double footprint_bytes(const FootprintModel& model);

inline double to_gigabytes(double bytes) { return bytes / 1e9; }

}  // namespace roqlora::quant
