// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <variant>

#include "roqlora/quant.hpp"

namespace roqlora::lora {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

enum class Mode { Train, Eval };

struct AdapterConfig {
    int rank = 8;
    double alpha = 8.0;
    double dropout = 0.05;
    /// Selects which named linear layers receive an adapter; empty = all.
    std::function<bool(const std::string&)> target;

    double scale() const { return alpha / static_cast<double>(rank); }
    bool selects(const std::string& layer) const { return !target || target(layer); }
    void validate() const;
};

/// Trainable rank-r pair: update = (alpha / r) * B * A.
struct LoraAdapter {
    Matrix A;  ///< rank x d_in
    Matrix B;  ///< d_out x rank
    AdapterConfig config;

    double scale() const { return config.scale(); }
};

/// A ~ U[-1/sqrt(d_in), 1/sqrt(d_in)], B = 0. Deterministic in `seed`.
LoraAdapter init_adapter(std::size_t d_in, std::size_t d_out, const AdapterConfig& config,
                         std::uint64_t seed);

using BaseWeight = std::variant<Matrix, quant::QuantizedTensor>;

/// Activations kept by a training-mode forward for the reverse pass.
struct LinearCache {
    Matrix x_drop;   ///< dropout-masked input (scaled), n x d_in
    Matrix mask;     ///< inverted-dropout multipliers, empty when no dropout was applied
    Matrix ax;       ///< x_drop * A^T, n x rank
    bool valid = false;
};

struct AdapterGrads {
    Matrix dA;
    Matrix dB;

    void zero_like(const LoraAdapter& adapter);
    double squared_norm() const { return dA.squaredNorm() + dB.squaredNorm(); }
};

/// Frozen base projection (dense or NF4) plus an optional adapter. Inputs are
/// row-major batches: x is n x d_in, output n x d_out.
class AdaptedLinear {
public:
    AdaptedLinear() = default;
    AdaptedLinear(BaseWeight base, std::size_t d_out, std::size_t d_in,
                  std::optional<Vector> bias = std::nullopt);

    std::size_t in_features() const noexcept { return d_in_; }
    std::size_t out_features() const noexcept { return d_out_; }
    bool quantized() const noexcept { return std::holds_alternative<quant::QuantizedTensor>(base_); }
    const BaseWeight& base() const noexcept { return base_; }
    const std::optional<Vector>& bias() const noexcept { return bias_; }

    bool has_adapter() const noexcept { return adapter_.has_value(); }
    LoraAdapter& adapter();
    const LoraAdapter& adapter() const;
    void attach(LoraAdapter adapter);

    /// Replaces a dense base with its NF4 encoding (row-major, d_out x d_in).
    void quantize_base(std::size_t block_size);

    /// Dense copy of the (dequantized) base weight.
    Matrix base_dense() const;

    Matrix forward(const Matrix& x, Mode mode, Rng* rng = nullptr, LinearCache* cache = nullptr) const;
    Matrix base_forward(const Matrix& x) const;

    /// Gradient with respect to the layer input for output cotangent `grad_out`.
    Matrix input_gradient(const Matrix& grad_out, const LinearCache& cache) const;

    /// FNV-1a over the base weight and bias bytes.
    std::uint64_t base_checksum() const;

private:
    template <typename Fn>
    void for_each_row_chunk(Fn&& fn) const;

    BaseWeight base_;
    std::optional<Vector> bias_;
    std::optional<LoraAdapter> adapter_;
    std::size_t d_out_ = 0;
    std::size_t d_in_ = 0;
};

/// dB = s * g^T (A x_drop), dA = s * (g B)^T x_drop, summed over the batch.
/// Throws std::logic_error when `cache` holds no training-mode forward.
AdapterGrads adapter_gradients(const AdaptedLinear& layer, const Matrix& grad_out,
                               const LinearCache& cache);

/// dequantize(base) + (alpha / r) * B * A
Matrix merge(const AdaptedLinear& layer);

}  // namespace roqlora::lora
