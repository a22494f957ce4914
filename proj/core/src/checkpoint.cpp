// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <cmath>

#include "roqlora/container.hpp"
#include "roqlora/errors.hpp"
#include "roqlora/tinylm.hpp"

namespace roqlora::tinylm {

namespace {

DenseTensor to_dense(const Matrix& m) {
    DenseTensor t;
    t.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
    t.values.resize(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            t.values[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
    return t;
}

DenseTensor to_dense(const Vector& v) {
    return DenseTensor{{static_cast<std::size_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size())};
}

Matrix to_matrix(const DenseTensor& t) {
    if (t.shape.size() != 2) throw FormatError("checkpoint: expected a rank-2 tensor");
    Matrix m(static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1]));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            m(r, c) = t.values[static_cast<std::size_t>(r * m.cols() + c)];
    return m;
}

Vector to_vector(const DenseTensor& t) {
    return Eigen::Map<const Vector>(t.values.data(), static_cast<Eigen::Index>(t.values.size()));
}

}  // namespace

class CheckpointIo {
public:
    static TensorContainer pack(const TinyLm& m) {
        TensorContainer c;
        const auto& cfg = m.config_;
        c.put("model.config",
              DenseTensor{{8},
                          {double(cfg.vocab_size), double(cfg.d_model), double(cfg.n_heads),
                           double(cfg.n_layers), double(cfg.d_ff), double(cfg.max_seq_len), cfg.rope_theta,
                           cfg.norm_eps}},
              DType::F64);
        c.put("model.embed_tokens", to_dense(m.embedding_), DType::F64);
        c.put("model.norm", to_dense(m.final_norm_), DType::F64);
        c.put("lm_head", to_dense(m.lm_head_), DType::F64);
        for (std::size_t l = 0; l < m.blocks_.size(); ++l) {
            const std::string p = "layers." + std::to_string(l) + ".";
            c.put(p + "attn_norm", to_dense(m.blocks_[l].attn_norm), DType::F64);
            c.put(p + "ffn_norm", to_dense(m.blocks_[l].ffn_norm), DType::F64);
        }
        for (const auto& [name, layer] : m.linears()) {
            if (const auto* dense = std::get_if<Matrix>(&layer->base())) {
                c.put(name + ".weight", to_dense(*dense), DType::F64);
            } else {
                c.put(name + ".weight", std::get<quant::QuantizedTensor>(layer->base()));
            }
            if (layer->has_adapter()) {
                const auto& ad = layer->adapter();
                c.put(name + ".lora_A", to_dense(ad.A), DType::F64);
                c.put(name + ".lora_B", to_dense(ad.B), DType::F64);
                c.put(name + ".lora_meta",
                      DenseTensor{{3}, {double(ad.config.rank), ad.config.alpha, ad.config.dropout}}, DType::F64);
            }
        }
        return c;
    }

    static TinyLm unpack(const TensorContainer& c) {
        const auto cfg_t = c.dense("model.config");
        if (cfg_t.values.size() != 8) throw FormatError("checkpoint: malformed model.config");
        ModelConfig cfg;
        cfg.vocab_size = static_cast<std::size_t>(cfg_t.values[0]);
        cfg.d_model = static_cast<std::size_t>(cfg_t.values[1]);
        cfg.n_heads = static_cast<std::size_t>(cfg_t.values[2]);
        cfg.n_layers = static_cast<std::size_t>(cfg_t.values[3]);
        cfg.d_ff = static_cast<std::size_t>(cfg_t.values[4]);
        cfg.max_seq_len = static_cast<std::size_t>(cfg_t.values[5]);
        cfg.rope_theta = cfg_t.values[6];
        cfg.norm_eps = cfg_t.values[7];
        cfg.validate();

        TinyLm m;
        m.config_ = cfg;
        m.embedding_ = to_matrix(c.dense("model.embed_tokens"));
        m.final_norm_ = to_vector(c.dense("model.norm"));
        m.lm_head_ = to_matrix(c.dense("lm_head"));
        m.blocks_.resize(cfg.n_layers);
        for (std::size_t l = 0; l < cfg.n_layers; ++l) {
            const std::string p = "layers." + std::to_string(l) + ".";
            m.blocks_[l].attn_norm = to_vector(c.dense(p + "attn_norm"));
            m.blocks_[l].ffn_norm = to_vector(c.dense(p + "ffn_norm"));
        }
        for (auto& [name, layer] : m.linears()) {
            const std::size_t d_out = (name.ends_with("gate_proj") || name.ends_with("up_proj")) ? cfg.d_ff : cfg.d_model;
            const std::size_t d_in = name.ends_with("down_proj") ? cfg.d_ff : cfg.d_model;
            const std::string w = name + ".weight";
            if (c.dtype(w) == DType::NF4) {
                *layer = lora::AdaptedLinear(c.quantized(w), d_out, d_in);
            } else {
                *layer = lora::AdaptedLinear(to_matrix(c.dense(w)), d_out, d_in);
            }
            if (c.contains(name + ".lora_A")) {
                const auto meta = c.dense(name + ".lora_meta");
                if (meta.values.size() != 3) throw FormatError("checkpoint: malformed " + name + ".lora_meta");
                lora::LoraAdapter ad;
                ad.config.rank = static_cast<int>(meta.values[0]);
                ad.config.alpha = meta.values[1];
                ad.config.dropout = meta.values[2];
                ad.config.validate();
                ad.A = to_matrix(c.dense(name + ".lora_A"));
                ad.B = to_matrix(c.dense(name + ".lora_B"));
                layer->attach(std::move(ad));
            }
        }
        return m;
    }
};

void TinyLm::save(const std::filesystem::path& path) const { CheckpointIo::pack(*this).save(path); }

TinyLm TinyLm::load(const std::filesystem::path& path) {
    return CheckpointIo::unpack(TensorContainer::load(path));
}

}  // namespace roqlora::tinylm
