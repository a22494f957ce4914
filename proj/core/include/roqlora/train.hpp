// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "roqlora/tinylm.hpp"

namespace roqlora::tinylm {

struct TrainConfig {
    double learning_rate = 1e-5;
    double weight_decay = 0.001;
    double grad_clip_norm = 0.01;
    std::size_t micro_batch = 2;
    std::size_t grad_accum_steps = 4;
    std::size_t total_steps = 50;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    std::size_t effective_batch() const { return micro_batch * grad_accum_steps; }
    void validate() const;
};

/// Adam with decoupled weight decay:
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
struct AdamW {
    double lr;
    double beta1;
    double beta2;
    double eps;
    double weight_decay;

    static AdamW from(const TrainConfig& cfg) {
        return {cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay};
    }

    /// `step` is the 1-based update count used for bias correction.
    void update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                std::span<double> v, std::uint64_t step) const;
};

struct OptimizerState {
    struct Moments {
        Matrix mA, vA, mB, vB;
    };
    std::vector<Moments> layers;
    std::uint64_t step = 0;

    static OptimizerState for_model(const TinyLm& model);
};

/// Rescales `grads` in place so the global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

/// Source of training sequences (token ids including BOS). Each sequence
/// must hold at least two tokens.
using SequenceSource = std::function<std::vector<int>()>;

/// BOS followed by the encoded text, truncated to `max_len` tokens.
std::vector<int> training_sequence(std::string_view text, const Tokenizer& tokenizer, std::size_t max_len);

/// Returns the sequences in order, wrapping around. Throws InvalidArgument
/// when empty.
SequenceSource cycle_sequences(std::vector<std::vector<int>> sequences);

struct StepResult {
    double loss = 0.0;           ///< mean over sequences of per-sequence mean CE
    double grad_norm = 0.0;      ///< pre-clip global norm
};

class Trainer {
public:
    Trainer(TinyLm& model, TrainConfig config);

    /// One optimizer update over micro_batch * grad_accum_steps sequences.
    /// Throws NumericError on a non-finite loss, leaving parameters unchanged.
    StepResult step(const SequenceSource& source);

    /// Mean per-sequence loss in eval mode (no dropout, no update).
    double evaluate(std::span<const std::vector<int>> sequences) const;

    const OptimizerState& optimizer() const noexcept { return opt_; }
    const TrainConfig& config() const noexcept { return config_; }

private:
    TinyLm& model_;
    TrainConfig config_;
    AdamW adam_;
    OptimizerState opt_;
    Rng rng_;
};

}  // namespace roqlora::tinylm
