// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "roqlora/train.hpp"

#include <cmath>
#include <memory>
#include <sstream>

#include "roqlora/errors.hpp"

namespace roqlora::tinylm {

namespace {

std::span<double> flat(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate > 0) || !(grad_clip_norm > 0) || !(adam_eps > 0) || weight_decay < 0) {
        throw InvalidArgument("TrainConfig: rates must be positive");
    }
    if (micro_batch == 0 || grad_accum_steps == 0) {
        throw InvalidArgument("TrainConfig: micro_batch and grad_accum_steps must be >= 1");
    }
    if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1)) {
        throw InvalidArgument("TrainConfig: Adam betas must be in [0, 1)");
    }
}

void AdamW::update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                   std::span<double> v, std::uint64_t step) const {
    if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
        throw InvalidArgument("AdamW: parameter/state size mismatch");
    }
    if (step == 0) throw InvalidArgument("AdamW: step counter starts at 1");
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        param[i] -= lr * (m_hat / (std::sqrt(v_hat) + eps) + weight_decay * param[i]);
    }
}

OptimizerState OptimizerState::for_model(const TinyLm& model) {
    OptimizerState s;
    for (const auto& [name, layer] : model.adapted_layers()) {
        const auto& ad = layer->adapter();
        s.layers.push_back({Matrix::Zero(ad.A.rows(), ad.A.cols()), Matrix::Zero(ad.A.rows(), ad.A.cols()),
                            Matrix::Zero(ad.B.rows(), ad.B.cols()), Matrix::Zero(ad.B.rows(), ad.B.cols())});
    }
    return s;
}

double clip_global_norm(Gradients& grads, double max_norm) {
    const double norm = std::sqrt(grads.squared_norm());
    if (norm > max_norm) grads.scale(max_norm / norm);
    return norm;
}

Trainer::Trainer(TinyLm& model, TrainConfig config)
    : model_(model),
      config_(config),
      adam_(AdamW::from(config)),
      opt_(OptimizerState::for_model(model)),
      rng_(config.seed) {
    config_.validate();
    if (opt_.layers.empty()) throw InvalidArgument("Trainer: model has no adapters attached");
}

StepResult Trainer::step(const SequenceSource& source) {
    Gradients grads = model_.zero_gradients();
    const std::size_t n_seq = config_.effective_batch();
    const double inv_batch = 1.0 / static_cast<double>(n_seq);
    double loss_sum = 0.0;

    for (std::size_t micro = 0; micro < config_.grad_accum_steps; ++micro) {
        for (std::size_t j = 0; j < config_.micro_batch; ++j) {
            const std::vector<int> seq = source();
            if (seq.size() < 2) throw InvalidArgument("Trainer: sequences need at least two tokens");
            const std::span<const int> all(seq);
            const auto inputs = all.first(seq.size() - 1);
            const auto targets = all.subspan(1);

            ForwardCache cache;
            const Matrix logits = model_.forward(inputs, Mode::Train, &rng_, &cache);
            const double loss = cross_entropy(logits, targets);
            if (!std::isfinite(loss)) {
                std::ostringstream msg;
                msg << "non-finite loss at optimizer step " << opt_.step + 1 << ", micro-batch " << micro
                    << ", sequence " << j << " (length " << seq.size() << "); update skipped";
                throw NumericError(msg.str());
            }
            loss_sum += loss;
            Matrix dlogits = cross_entropy_grad(logits, targets) * inv_batch;
            model_.backward(dlogits, cache, grads);
        }
    }

    StepResult result;
    result.loss = loss_sum * inv_batch;
    result.grad_norm = clip_global_norm(grads, config_.grad_clip_norm);
    if (!std::isfinite(result.grad_norm)) {
        throw NumericError("non-finite gradient norm at optimizer step " + std::to_string(opt_.step + 1));
    }

    ++opt_.step;
    auto layers = model_.adapted_layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto& ad = layers[i].second->adapter();
        auto& mo = opt_.layers[i];
        adam_.update(flat(ad.A), flat(grads.layers[i].dA), flat(mo.mA), flat(mo.vA), opt_.step);
        adam_.update(flat(ad.B), flat(grads.layers[i].dB), flat(mo.mB), flat(mo.vB), opt_.step);
    }
    return result;
}

double Trainer::evaluate(std::span<const std::vector<int>> sequences) const {
    if (sequences.empty()) throw InvalidArgument("evaluate: no sequences");
    double total = 0.0;
    for (const auto& seq : sequences) {
        const std::span<const int> all(seq);
        total += cross_entropy(model_.forward(all.first(seq.size() - 1)), all.subspan(1));
    }
    return total / static_cast<double>(sequences.size());
}

std::vector<int> training_sequence(std::string_view text, const Tokenizer& tokenizer, std::size_t max_len) {
    if (max_len < 2) throw InvalidArgument("training sequences need room for at least two tokens");
    std::vector<int> seq{tokenizer.bos()};
    for (const int id : tokenizer.encode(text)) {
        if (seq.size() == max_len) break;
        seq.push_back(id);
    }
    return seq;
}

SequenceSource cycle_sequences(std::vector<std::vector<int>> sequences) {
    if (sequences.empty()) throw InvalidArgument("no training sequences");
    for (const auto& s : sequences) {
        if (s.size() < 2) throw InvalidArgument("training sequence shorter than two tokens");
    }
    auto data = std::make_shared<std::vector<std::vector<int>>>(std::move(sequences));
    auto next = std::make_shared<std::size_t>(0);
    return [data, next] {
        const auto& s = (*data)[*next];
        *next = (*next + 1) % data->size();
        return s;
    };
}

}  // namespace roqlora::tinylm
