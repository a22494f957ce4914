// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "roqlora/lora.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "roqlora/errors.hpp"

namespace roqlora::lora {

namespace {

constexpr std::size_t kRowsPerChunk = 32;

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

void check_input(const Matrix& x, std::size_t d_in) {
    if (static_cast<std::size_t>(x.cols()) != d_in) {
        throw InvalidArgument("linear: input has " + std::to_string(x.cols()) + " features, expected " +
                              std::to_string(d_in));
    }
}

}  // namespace

void AdapterConfig::validate() const {
    if (rank < 1) throw InvalidArgument("LoRA rank must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("LoRA dropout must be in [0, 1)");
    if (!std::isfinite(alpha)) throw InvalidArgument("LoRA alpha must be finite");
}

LoraAdapter init_adapter(std::size_t d_in, std::size_t d_out, const AdapterConfig& config,
                         std::uint64_t seed) {
    config.validate();
    if (d_in == 0 || d_out == 0) throw InvalidArgument("init_adapter: dimensions must be >= 1");
    const auto r = static_cast<std::size_t>(config.rank);
    if (r > std::min(d_in, d_out)) {
        throw InvalidArgument("init_adapter: rank " + std::to_string(r) + " exceeds layer rank " +
                              std::to_string(std::min(d_in, d_out)));
    }
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
    std::uniform_real_distribution<double> dist(-bound, bound);

    LoraAdapter adapter;
    adapter.config = config;
    adapter.A.resize(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(d_in));
    for (Eigen::Index i = 0; i < adapter.A.rows(); ++i) {
        for (Eigen::Index j = 0; j < adapter.A.cols(); ++j) adapter.A(i, j) = dist(rng);
    }
    adapter.B = Matrix::Zero(static_cast<Eigen::Index>(d_out), static_cast<Eigen::Index>(r));
    return adapter;
}

void AdapterGrads::zero_like(const LoraAdapter& adapter) {
    dA = Matrix::Zero(adapter.A.rows(), adapter.A.cols());
    dB = Matrix::Zero(adapter.B.rows(), adapter.B.cols());
}

AdaptedLinear::AdaptedLinear(BaseWeight base, std::size_t d_out, std::size_t d_in,
                             std::optional<Vector> bias)
    : base_(std::move(base)), bias_(std::move(bias)), d_out_(d_out), d_in_(d_in) {
    if (const auto* dense = std::get_if<Matrix>(&base_)) {
        if (static_cast<std::size_t>(dense->rows()) != d_out || static_cast<std::size_t>(dense->cols()) != d_in) {
            throw InvalidArgument("AdaptedLinear: base weight shape mismatch");
        }
    } else if (std::get<quant::QuantizedTensor>(base_).element_count() != d_out * d_in) {
        throw InvalidArgument("AdaptedLinear: quantized base element count mismatch");
    }
    if (bias_ && static_cast<std::size_t>(bias_->size()) != d_out) {
        throw InvalidArgument("AdaptedLinear: bias length mismatch");
    }
}

LoraAdapter& AdaptedLinear::adapter() {
    if (!adapter_) throw std::logic_error("AdaptedLinear: no adapter attached");
    return *adapter_;
}

const LoraAdapter& AdaptedLinear::adapter() const {
    if (!adapter_) throw std::logic_error("AdaptedLinear: no adapter attached");
    return *adapter_;
}

void AdaptedLinear::attach(LoraAdapter adapter) {
    if (static_cast<std::size_t>(adapter.A.cols()) != d_in_ ||
        static_cast<std::size_t>(adapter.B.rows()) != d_out_ || adapter.A.rows() != adapter.B.cols() ||
        adapter.A.rows() != adapter.config.rank) {
        throw InvalidArgument("attach: adapter shape does not match layer");
    }
    adapter_ = std::move(adapter);
}

void AdaptedLinear::quantize_base(std::size_t block_size) {
    const auto* dense = std::get_if<Matrix>(&base_);
    if (dense == nullptr) return;
    // Row-major flattening so that output row j occupies [j*d_in, (j+1)*d_in).
    std::vector<double> flat(d_out_ * d_in_);
    for (std::size_t r = 0; r < d_out_; ++r) {
        for (std::size_t c = 0; c < d_in_; ++c) {
            flat[r * d_in_ + c] = (*dense)(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        }
    }
    base_ = quant::quantize(std::span<const double>(flat), block_size, {d_out_, d_in_});
}

template <typename Fn>
void AdaptedLinear::for_each_row_chunk(Fn&& fn) const {
    if (const auto* dense = std::get_if<Matrix>(&base_)) {
        fn(Eigen::Index{0}, *dense);
        return;
    }
    const auto& qt = std::get<quant::QuantizedTensor>(base_);
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    RowMajor scratch(static_cast<Eigen::Index>(std::min(kRowsPerChunk, d_out_)),
                     static_cast<Eigen::Index>(d_in_));
    for (std::size_t r0 = 0; r0 < d_out_; r0 += kRowsPerChunk) {
        const std::size_t rows = std::min(kRowsPerChunk, d_out_ - r0);
        quant::dequantize_range(qt, r0 * d_in_, std::span<double>(scratch.data(), rows * d_in_));
        fn(static_cast<Eigen::Index>(r0), scratch.topRows(static_cast<Eigen::Index>(rows)));
    }
}

Matrix AdaptedLinear::base_dense() const {
    Matrix w(static_cast<Eigen::Index>(d_out_), static_cast<Eigen::Index>(d_in_));
    for_each_row_chunk([&](Eigen::Index r0, const auto& chunk) { w.middleRows(r0, chunk.rows()) = chunk; });
    return w;
}

Matrix AdaptedLinear::base_forward(const Matrix& x) const {
    check_input(x, d_in_);
    Matrix y(x.rows(), static_cast<Eigen::Index>(d_out_));
    for_each_row_chunk([&](Eigen::Index r0, const auto& chunk) {
        y.middleCols(r0, chunk.rows()).noalias() = x * chunk.transpose();
    });
    if (bias_) y.rowwise() += bias_->transpose();
    return y;
}

Matrix AdaptedLinear::forward(const Matrix& x, Mode mode, Rng* rng, LinearCache* cache) const {
    Matrix y = base_forward(x);
    if (!adapter_) {
        if (cache) *cache = LinearCache{};
        return y;
    }
    const LoraAdapter& ad = *adapter_;
    const double p = ad.config.dropout;

    Matrix mask;
    Matrix x_drop;
    if (mode == Mode::Train && p > 0.0) {
        if (rng == nullptr) throw InvalidArgument("forward: training mode with dropout needs an rng");
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double keep = 1.0 / (1.0 - p);
        mask.resize(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < mask.rows(); ++i) {
            for (Eigen::Index j = 0; j < mask.cols(); ++j) mask(i, j) = u(*rng) < p ? 0.0 : keep;
        }
        x_drop = x.cwiseProduct(mask);
    } else {
        x_drop = x;
    }
    Matrix ax = x_drop * ad.A.transpose();
    y.noalias() += ad.scale() * (ax * ad.B.transpose());

    if (cache) {
        cache->x_drop = std::move(x_drop);
        cache->mask = std::move(mask);
        cache->ax = std::move(ax);
        cache->valid = true;
    }
    return y;
}

Matrix AdaptedLinear::input_gradient(const Matrix& grad_out, const LinearCache& cache) const {
    if (static_cast<std::size_t>(grad_out.cols()) != d_out_) {
        throw InvalidArgument("input_gradient: cotangent width mismatch");
    }
    Matrix dx = Matrix::Zero(grad_out.rows(), static_cast<Eigen::Index>(d_in_));
    for_each_row_chunk([&](Eigen::Index r0, const auto& chunk) {
        dx.noalias() += grad_out.middleCols(r0, chunk.rows()) * chunk;
    });
    if (adapter_) {
        if (!cache.valid) throw std::logic_error("input_gradient: no cached training forward");
        const LoraAdapter& ad = *adapter_;
        Matrix d_xdrop = ad.scale() * ((grad_out * ad.B) * ad.A);
        if (cache.mask.size() != 0) d_xdrop = d_xdrop.cwiseProduct(cache.mask);
        dx += d_xdrop;
    }
    return dx;
}

std::uint64_t AdaptedLinear::base_checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    if (const auto* dense = std::get_if<Matrix>(&base_)) {
        h = fnv1a(dense->data(), static_cast<std::size_t>(dense->size()) * sizeof(double), h);
    } else {
        const auto& qt = std::get<quant::QuantizedTensor>(base_);
        h = fnv1a(qt.packed_codes().data(), qt.packed_codes().size(), h);
        for (std::size_t b = 0; b < qt.block_count(); ++b) {
            const double s = qt.scale(b);
            h = fnv1a(&s, sizeof s, h);
        }
    }
    if (bias_) h = fnv1a(bias_->data(), static_cast<std::size_t>(bias_->size()) * sizeof(double), h);
    return h;
}

AdapterGrads adapter_gradients(const AdaptedLinear& layer, const Matrix& grad_out,
                               const LinearCache& cache) {
    if (!cache.valid) throw std::logic_error("adapter_gradients: no cached training forward");
    const LoraAdapter& ad = layer.adapter();
    if (grad_out.rows() != cache.ax.rows() ||
        static_cast<std::size_t>(grad_out.cols()) != layer.out_features()) {
        throw InvalidArgument("adapter_gradients: cotangent shape mismatch");
    }
    const double s = ad.scale();
    AdapterGrads g;
    g.dB = s * (grad_out.transpose() * cache.ax);
    g.dA = s * ((grad_out * ad.B).transpose() * cache.x_drop);
    return g;
}

Matrix merge(const AdaptedLinear& layer) {
    Matrix w = layer.base_dense();
    if (layer.has_adapter()) {
        const LoraAdapter& ad = layer.adapter();
        w.noalias() += ad.scale() * (ad.B * ad.A);
    }
    return w;
}

}  // namespace roqlora::lora
