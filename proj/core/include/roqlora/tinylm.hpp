// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "roqlora/lora.hpp"
#include "roqlora/tokenizer.hpp"

namespace roqlora::tinylm {

using lora::Matrix;
using lora::Mode;
using lora::Rng;
using lora::Vector;

struct ModelConfig {
    std::size_t vocab_size = 260;
    std::size_t d_model = 128;
    std::size_t n_heads = 4;
    std::size_t n_layers = 4;
    std::size_t d_ff = 512;
    std::size_t max_seq_len = 256;
    double rope_theta = 10000.0;
    double norm_eps = 1e-5;

    std::size_t head_dim() const { return d_model / n_heads; }
    void validate() const;
};

/// Pre-norm decoder block: RMSNorm -> causal MHA (RoPE) -> residual,
/// RMSNorm -> SwiGLU FFN -> residual.
struct Block {
    Vector attn_norm;
    Vector ffn_norm;
    lora::AdaptedLinear q_proj, k_proj, v_proj, o_proj;
    lora::AdaptedLinear gate_proj, up_proj, down_proj;
};

struct BlockCache {
    Matrix x_in, h_attn;
    Matrix q, k, v;                 ///< post-RoPE q, k
    std::vector<Matrix> probs;      ///< per-head attention weights, T x T
    Matrix attn_out;                ///< concatenated head outputs, pre o_proj
    Matrix x_mid, h_ffn;
    Matrix gate, up;
    lora::LinearCache q_c, k_c, v_c, o_c, gate_c, up_c, down_c;
};

struct ForwardCache {
    std::vector<BlockCache> blocks;
    Matrix x_final;                 ///< residual stream before the final norm
    Matrix h_final;
};

/// Adapter gradients in the order of TinyLm::adapted_layers().
struct Gradients {
    std::vector<lora::AdapterGrads> layers;

    double squared_norm() const;
    void scale(double factor);
};

class TinyLm {
public:
    /// Random frozen base; embeddings and head ~ N(0, 0.02), projections
    /// ~ U[-1/sqrt(d_in), 1/sqrt(d_in)], norm weights 1.
    static TinyLm init(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return config_; }

    /// NF4-encodes every projection weight in the decoder blocks.
    void quantize_base(std::size_t block_size = quant::kDefaultBlockSize);
    /// Attaches an adapter to every block projection selected by `config.target`.
    void attach_adapters(const lora::AdapterConfig& config, std::uint64_t seed);

    /// Named projections ("layers.<i>.<proj>") in a fixed order.
    std::vector<std::pair<std::string, lora::AdaptedLinear*>> linears();
    std::vector<std::pair<std::string, const lora::AdaptedLinear*>> linears() const;
    /// Subset of linears() that carries an adapter.
    std::vector<std::pair<std::string, lora::AdaptedLinear*>> adapted_layers();
    std::vector<std::pair<std::string, const lora::AdaptedLinear*>> adapted_layers() const;

    Gradients zero_gradients() const;

    /// logits: seq_len x vocab_size. Throws InvalidArgument on out-of-range
    /// tokens or sequences longer than max_seq_len.
    Matrix forward(std::span<const int> tokens) const;
    Matrix forward(std::span<const int> tokens, Mode mode, Rng* rng, ForwardCache* cache) const;

    /// Accumulates adapter gradients for `dlogits` into `grads`.
    void backward(const Matrix& dlogits, const ForwardCache& cache, Gradients& grads) const;

    /// Checksum over embeddings, norms, head and every frozen base weight.
    std::uint64_t frozen_checksum() const;

    const Matrix& embedding() const noexcept { return embedding_; }
    const Matrix& lm_head() const noexcept { return lm_head_; }
    const Vector& final_norm() const noexcept { return final_norm_; }
    const std::vector<Block>& blocks() const noexcept { return blocks_; }

    void save(const std::filesystem::path& path) const;
    static TinyLm load(const std::filesystem::path& path);

private:
    friend class CheckpointIo;

    ModelConfig config_;
    Matrix embedding_;   ///< vocab x d_model
    std::vector<Block> blocks_;
    Vector final_norm_;
    Matrix lm_head_;     ///< vocab x d_model
};

/// Mean over rows of -log softmax(logits)[target].
double cross_entropy(const Matrix& logits, std::span<const int> targets);
/// d cross_entropy / d logits.
Matrix cross_entropy_grad(const Matrix& logits, std::span<const int> targets);

struct GenerationConfig {
    double temperature = 0.6;
    double top_p = 0.9;
    std::string stop = "\n";
    std::size_t max_new_tokens = 10;
    std::uint64_t seed = 0;
};

/// Indices kept by nucleus truncation with their renormalized probabilities,
/// in descending-probability order (ties by lower index).
std::vector<std::pair<int, double>> nucleus_filter(std::span<const double> probs, double top_p);

/// Draws one token from a logits row. temperature < 1e-6 means argmax.
int sample_token(std::span<const double> logits, double temperature, double top_p, Rng& rng);

/// Autoregressive sampling with left-truncated context. The returned text
/// excludes the stop sequence and anything after it.
std::string generate(const TinyLm& model, const Tokenizer& tokenizer, const std::string& prompt,
                     const GenerationConfig& gen, Rng& rng);

}  // namespace roqlora::tinylm
