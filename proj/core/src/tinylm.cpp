// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "roqlora/tinylm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "roqlora/errors.hpp"

namespace roqlora::tinylm {

namespace {

constexpr std::array<const char*, 7> kProjNames = {"q_proj",    "k_proj",  "v_proj",   "o_proj",
                                                   "gate_proj", "up_proj", "down_proj"};

std::array<lora::AdaptedLinear*, 7> projections(Block& b) {
    return {&b.q_proj, &b.k_proj, &b.v_proj, &b.o_proj, &b.gate_proj, &b.up_proj, &b.down_proj};
}

std::array<const lora::AdaptedLinear*, 7> projections(const Block& b) {
    return {&b.q_proj, &b.k_proj, &b.v_proj, &b.o_proj, &b.gate_proj, &b.up_proj, &b.down_proj};
}

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
}

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
}

lora::AdaptedLinear make_linear(std::size_t d_out, std::size_t d_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
    return lora::AdaptedLinear(uniform_matrix(static_cast<Eigen::Index>(d_out),
                                              static_cast<Eigen::Index>(d_in), bound, rng),
                               d_out, d_in);
}

Matrix rms_norm(const Matrix& x, const Vector& weight, double eps) {
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
        const double rms = std::sqrt(x.row(t).squaredNorm() / static_cast<double>(x.cols()) + eps);
        y.row(t) = (x.row(t) / rms).cwiseProduct(weight.transpose());
    }
    return y;
}

Matrix rms_norm_backward(const Matrix& x, const Vector& weight, double eps, const Matrix& dy) {
    Matrix dx(x.rows(), x.cols());
    const double n = static_cast<double>(x.cols());
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
        const double rms = std::sqrt(x.row(t).squaredNorm() / n + eps);
        const Eigen::RowVectorXd xhat = x.row(t) / rms;
        const Eigen::RowVectorXd dxhat = dy.row(t).cwiseProduct(weight.transpose());
        const double proj = dxhat.dot(xhat) / n;
        dx.row(t) = (dxhat - xhat * proj) / rms;
    }
    return dx;
}

// Rotates consecutive pairs within each head by position-dependent angles;
// `inverse` applies the transpose rotation (used by the reverse pass).
void apply_rope(Matrix& m, const ModelConfig& cfg, bool inverse) {
    const std::size_t dh = cfg.head_dim();
    for (Eigen::Index t = 0; t < m.rows(); ++t) {
        for (std::size_t i = 0; i < dh / 2; ++i) {
            const double freq = std::pow(cfg.rope_theta, -2.0 * static_cast<double>(i) / static_cast<double>(dh));
            const double angle = static_cast<double>(t) * freq;
            const double c = std::cos(angle);
            const double s = inverse ? -std::sin(angle) : std::sin(angle);
            for (std::size_t h = 0; h < cfg.n_heads; ++h) {
                const auto a = static_cast<Eigen::Index>(h * dh + 2 * i);
                const double x0 = m(t, a);
                const double x1 = m(t, a + 1);
                m(t, a) = x0 * c - x1 * s;
                m(t, a + 1) = x0 * s + x1 * c;
            }
        }
    }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <typename M>
std::uint64_t hash_matrix(const M& m, std::uint64_t h) {
    return fnv1a(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double), h);
}

void softmax_inplace(std::vector<double>& v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (double& x : v) x /= sum;
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size == 0 || d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0 || max_seq_len == 0) {
        throw InvalidArgument("ModelConfig: all dimensions must be positive");
    }
    if (d_model % n_heads != 0) throw InvalidArgument("ModelConfig: d_model must be divisible by n_heads");
    if (head_dim() % 2 != 0) throw InvalidArgument("ModelConfig: head dimension must be even for RoPE");
}

double Gradients::squared_norm() const {
    double s = 0.0;
    for (const auto& g : layers) s += g.squared_norm();
    return s;
}

void Gradients::scale(double factor) {
    for (auto& g : layers) {
        g.dA *= factor;
        g.dB *= factor;
    }
}

TinyLm TinyLm::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    TinyLm m;
    m.config_ = config;
    const auto V = static_cast<Eigen::Index>(config.vocab_size);
    const auto D = static_cast<Eigen::Index>(config.d_model);
    m.embedding_ = normal_matrix(V, D, 0.02, rng);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        Block b;
        b.attn_norm = Vector::Ones(D);
        b.ffn_norm = Vector::Ones(D);
        b.q_proj = make_linear(config.d_model, config.d_model, rng);
        b.k_proj = make_linear(config.d_model, config.d_model, rng);
        b.v_proj = make_linear(config.d_model, config.d_model, rng);
        b.o_proj = make_linear(config.d_model, config.d_model, rng);
        b.gate_proj = make_linear(config.d_ff, config.d_model, rng);
        b.up_proj = make_linear(config.d_ff, config.d_model, rng);
        b.down_proj = make_linear(config.d_model, config.d_ff, rng);
        m.blocks_.push_back(std::move(b));
    }
    m.final_norm_ = Vector::Ones(D);
    m.lm_head_ = normal_matrix(V, D, 0.02, rng);
    return m;
}

void TinyLm::quantize_base(std::size_t block_size) {
    for (auto& [name, layer] : linears()) layer->quantize_base(block_size);
}

void TinyLm::attach_adapters(const lora::AdapterConfig& config, std::uint64_t seed) {
    std::uint64_t i = 0;
    for (auto& [name, layer] : linears()) {
        ++i;
        if (!config.selects(name)) continue;
        layer->attach(lora::init_adapter(layer->in_features(), layer->out_features(), config,
                                         seed * 0x9E3779B97F4A7C15ULL + i));
    }
}

std::vector<std::pair<std::string, lora::AdaptedLinear*>> TinyLm::linears() {
    std::vector<std::pair<std::string, lora::AdaptedLinear*>> out;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        auto projs = projections(blocks_[l]);
        for (std::size_t p = 0; p < projs.size(); ++p) {
            out.emplace_back("layers." + std::to_string(l) + "." + kProjNames[p], projs[p]);
        }
    }
    return out;
}

std::vector<std::pair<std::string, const lora::AdaptedLinear*>> TinyLm::linears() const {
    std::vector<std::pair<std::string, const lora::AdaptedLinear*>> out;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        auto projs = projections(blocks_[l]);
        for (std::size_t p = 0; p < projs.size(); ++p) {
            out.emplace_back("layers." + std::to_string(l) + "." + kProjNames[p], projs[p]);
        }
    }
    return out;
}

std::vector<std::pair<std::string, lora::AdaptedLinear*>> TinyLm::adapted_layers() {
    auto all = linears();
    std::erase_if(all, [](const auto& e) { return !e.second->has_adapter(); });
    return all;
}

std::vector<std::pair<std::string, const lora::AdaptedLinear*>> TinyLm::adapted_layers() const {
    auto all = linears();
    std::erase_if(all, [](const auto& e) { return !e.second->has_adapter(); });
    return all;
}

Gradients TinyLm::zero_gradients() const {
    Gradients g;
    for (const auto& [name, layer] : adapted_layers()) {
        g.layers.emplace_back();
        g.layers.back().zero_like(layer->adapter());
    }
    return g;
}

Matrix TinyLm::forward(std::span<const int> tokens) const {
    return forward(tokens, Mode::Eval, nullptr, nullptr);
}

Matrix TinyLm::forward(std::span<const int> tokens, Mode mode, Rng* rng, ForwardCache* cache) const {
    if (tokens.empty()) throw InvalidArgument("forward: empty token sequence");
    if (tokens.size() > config_.max_seq_len) {
        throw InvalidArgument("forward: sequence length " + std::to_string(tokens.size()) +
                              " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
    }
    const auto T = static_cast<Eigen::Index>(tokens.size());
    const auto dh = static_cast<Eigen::Index>(config_.head_dim());
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix x(T, static_cast<Eigen::Index>(config_.d_model));
    for (Eigen::Index t = 0; t < T; ++t) {
        const int id = tokens[static_cast<std::size_t>(t)];
        if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
            throw InvalidArgument("forward: token id " + std::to_string(id) + " at position " +
                                  std::to_string(t) + " is out of range");
        }
        x.row(t) = embedding_.row(id);
    }
    if (cache) cache->blocks.assign(blocks_.size(), BlockCache{});

    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const Block& b = blocks_[l];
        BlockCache* bc = cache ? &cache->blocks[l] : nullptr;

        const Matrix h = rms_norm(x, b.attn_norm, config_.norm_eps);
        Matrix q = b.q_proj.forward(h, mode, rng, bc ? &bc->q_c : nullptr);
        Matrix k = b.k_proj.forward(h, mode, rng, bc ? &bc->k_c : nullptr);
        Matrix v = b.v_proj.forward(h, mode, rng, bc ? &bc->v_c : nullptr);
        apply_rope(q, config_, false);
        apply_rope(k, config_, false);

        Matrix attn(T, x.cols());
        std::vector<Matrix> probs;
        for (std::size_t hd = 0; hd < config_.n_heads; ++hd) {
            const Eigen::Index c0 = static_cast<Eigen::Index>(hd) * dh;
            Matrix scores = q.middleCols(c0, dh) * k.middleCols(c0, dh).transpose() * inv_sqrt_dh;
            Matrix p = Matrix::Zero(T, T);
            for (Eigen::Index t = 0; t < T; ++t) {
                const double mx = scores.row(t).head(t + 1).maxCoeff();
                double sum = 0.0;
                for (Eigen::Index j = 0; j <= t; ++j) {
                    p(t, j) = std::exp(scores(t, j) - mx);
                    sum += p(t, j);
                }
                p.row(t).head(t + 1) /= sum;
            }
            attn.middleCols(c0, dh).noalias() = p * v.middleCols(c0, dh);
            probs.push_back(std::move(p));
        }
        const Matrix a = b.o_proj.forward(attn, mode, rng, bc ? &bc->o_c : nullptr);
        Matrix x_mid = x + a;

        const Matrix h2 = rms_norm(x_mid, b.ffn_norm, config_.norm_eps);
        Matrix gate = b.gate_proj.forward(h2, mode, rng, bc ? &bc->gate_c : nullptr);
        Matrix up = b.up_proj.forward(h2, mode, rng, bc ? &bc->up_c : nullptr);
        Matrix act(gate.rows(), gate.cols());
        for (Eigen::Index i = 0; i < gate.size(); ++i) {
            act.data()[i] = gate.data()[i] * sigmoid(gate.data()[i]) * up.data()[i];
        }
        const Matrix f = b.down_proj.forward(act, mode, rng, bc ? &bc->down_c : nullptr);

        if (bc) {
            bc->x_in = std::move(x);
            bc->h_attn = h;
            bc->q = std::move(q);
            bc->k = std::move(k);
            bc->v = std::move(v);
            bc->probs = std::move(probs);
            bc->attn_out = std::move(attn);
            bc->x_mid = x_mid;
            bc->h_ffn = h2;
            bc->gate = std::move(gate);
            bc->up = std::move(up);
        }
        x = x_mid + f;
    }

    Matrix hf = rms_norm(x, final_norm_, config_.norm_eps);
    Matrix logits = hf * lm_head_.transpose();
    if (cache) {
        cache->x_final = std::move(x);
        cache->h_final = std::move(hf);
    }
    return logits;
}

void TinyLm::backward(const Matrix& dlogits, const ForwardCache& cache, Gradients& grads) const {
    if (cache.blocks.size() != blocks_.size()) throw std::logic_error("backward: cache does not match model");
    const auto dh = static_cast<Eigen::Index>(config_.head_dim());
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    // Gradient slot of each (block, projection), -1 when no adapter.
    std::vector<std::array<int, 7>> slot(blocks_.size());
    int next = 0;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        auto projs = projections(blocks_[l]);
        for (std::size_t p = 0; p < 7; ++p) slot[l][p] = projs[p]->has_adapter() ? next++ : -1;
    }
    if (grads.layers.size() != static_cast<std::size_t>(next)) {
        throw std::logic_error("backward: gradient buffer does not match adapters");
    }

    auto through = [&](const lora::AdaptedLinear& layer, int s, const Matrix& g,
                       const lora::LinearCache& c) {
        if (s >= 0) {
            auto ag = lora::adapter_gradients(layer, g, c);
            grads.layers[static_cast<std::size_t>(s)].dA += ag.dA;
            grads.layers[static_cast<std::size_t>(s)].dB += ag.dB;
        }
        return layer.input_gradient(g, c);
    };

    Matrix dx = rms_norm_backward(cache.x_final, final_norm_, config_.norm_eps, dlogits * lm_head_);

    for (std::size_t li = blocks_.size(); li-- > 0;) {
        const Block& b = blocks_[li];
        const BlockCache& bc = cache.blocks[li];
        const auto& s = slot[li];

        // Feed-forward branch.
        const Matrix d_act = through(b.down_proj, s[6], dx, bc.down_c);
        Matrix d_gate(bc.gate.rows(), bc.gate.cols());
        Matrix d_up(bc.up.rows(), bc.up.cols());
        for (Eigen::Index i = 0; i < bc.gate.size(); ++i) {
            const double g = bc.gate.data()[i];
            const double sg = sigmoid(g);
            d_up.data()[i] = d_act.data()[i] * g * sg;
            d_gate.data()[i] = d_act.data()[i] * bc.up.data()[i] * sg * (1.0 + g * (1.0 - sg));
        }
        Matrix dh2 = through(b.gate_proj, s[4], d_gate, bc.gate_c);
        dh2 += through(b.up_proj, s[5], d_up, bc.up_c);
        dx += rms_norm_backward(bc.x_mid, b.ffn_norm, config_.norm_eps, dh2);

        // Attention branch.
        const Matrix d_attn = through(b.o_proj, s[3], dx, bc.o_c);
        Matrix dq = Matrix::Zero(bc.q.rows(), bc.q.cols());
        Matrix dk = Matrix::Zero(bc.k.rows(), bc.k.cols());
        Matrix dv = Matrix::Zero(bc.v.rows(), bc.v.cols());
        for (std::size_t hd = 0; hd < config_.n_heads; ++hd) {
            const Eigen::Index c0 = static_cast<Eigen::Index>(hd) * dh;
            const Matrix& p = bc.probs[hd];
            const auto d_o = d_attn.middleCols(c0, dh);
            const Matrix dp = d_o * bc.v.middleCols(c0, dh).transpose();
            dv.middleCols(c0, dh).noalias() = p.transpose() * d_o;
            Matrix ds = p.cwiseProduct(dp);
            const Vector row_dot = ds.rowwise().sum();
            ds -= p.cwiseProduct(row_dot.replicate(1, p.cols()));
            ds *= inv_sqrt_dh;
            dq.middleCols(c0, dh).noalias() = ds * bc.k.middleCols(c0, dh);
            dk.middleCols(c0, dh).noalias() = ds.transpose() * bc.q.middleCols(c0, dh);
        }
        apply_rope(dq, config_, true);
        apply_rope(dk, config_, true);
        Matrix dh1 = through(b.q_proj, s[0], dq, bc.q_c);
        dh1 += through(b.k_proj, s[1], dk, bc.k_c);
        dh1 += through(b.v_proj, s[2], dv, bc.v_c);
        dx += rms_norm_backward(bc.x_in, b.attn_norm, config_.norm_eps, dh1);
    }
}

std::uint64_t TinyLm::frozen_checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    h = hash_matrix(embedding_, h);
    for (const auto& b : blocks_) {
        h = hash_matrix(b.attn_norm, h);
        h = hash_matrix(b.ffn_norm, h);
        for (const auto* p : projections(b)) {
            const std::uint64_t lh = p->base_checksum();
            h = fnv1a(&lh, sizeof lh, h);
        }
    }
    h = hash_matrix(final_norm_, h);
    return hash_matrix(lm_head_, h);
}

// ---------------------------------------------------------------------------

double cross_entropy(const Matrix& logits, std::span<const int> targets) {
    if (static_cast<std::size_t>(logits.rows()) != targets.size()) {
        throw InvalidArgument("cross_entropy: targets length does not match logits rows");
    }
    if (targets.empty()) throw InvalidArgument("cross_entropy: no targets");
    double total = 0.0;
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
        const int y = targets[static_cast<std::size_t>(t)];
        if (y < 0 || y >= logits.cols()) throw InvalidArgument("cross_entropy: target out of range");
        const double mx = logits.row(t).maxCoeff();
        const double lse = mx + std::log((logits.row(t).array() - mx).exp().sum());
        total += lse - logits(t, y);
    }
    return total / static_cast<double>(logits.rows());
}

Matrix cross_entropy_grad(const Matrix& logits, std::span<const int> targets) {
    if (static_cast<std::size_t>(logits.rows()) != targets.size() || targets.empty()) {
        throw InvalidArgument("cross_entropy_grad: targets length does not match logits rows");
    }
    Matrix g(logits.rows(), logits.cols());
    const double inv_n = 1.0 / static_cast<double>(logits.rows());
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
        const double mx = logits.row(t).maxCoeff();
        const Eigen::RowVectorXd e = (logits.row(t).array() - mx).exp().matrix();
        g.row(t) = e / e.sum() * inv_n;
        g(t, targets[static_cast<std::size_t>(t)]) -= inv_n;
    }
    return g;
}

std::vector<std::pair<int, double>> nucleus_filter(std::span<const double> probs, double top_p) {
    if (!(top_p > 0.0 && top_p <= 1.0)) throw InvalidArgument("nucleus_filter: top_p must be in (0, 1]");
    std::vector<int> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)]; });
    std::vector<std::pair<int, double>> kept;
    double cumulative = 0.0;
    for (int idx : order) {
        kept.emplace_back(idx, probs[static_cast<std::size_t>(idx)]);
        cumulative += probs[static_cast<std::size_t>(idx)];
        if (cumulative >= top_p) break;
    }
    for (auto& [idx, p] : kept) p /= cumulative;
    return kept;
}

int sample_token(std::span<const double> logits, double temperature, double top_p, Rng& rng) {
    if (logits.empty()) throw InvalidArgument("sample_token: empty logits");
    if (temperature < 1e-6) {
        return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    }
    std::vector<double> probs(logits.begin(), logits.end());
    for (double& v : probs) v /= temperature;
    softmax_inplace(probs);
    const auto kept = nucleus_filter(probs, top_p);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double r = u(rng);
    double acc = 0.0;
    for (const auto& [idx, p] : kept) {
        acc += p;
        if (r < acc) return idx;
    }
    return kept.back().first;
}

std::string generate(const TinyLm& model, const Tokenizer& tokenizer, const std::string& prompt,
                     const GenerationConfig& gen, Rng& rng) {
    std::vector<int> ids{tokenizer.bos()};
    const auto prompt_ids = tokenizer.encode(prompt);
    ids.insert(ids.end(), prompt_ids.begin(), prompt_ids.end());
    const std::size_t ctx = model.config().max_seq_len;

    std::vector<int> produced;
    std::string text;
    for (std::size_t step = 0; step < gen.max_new_tokens; ++step) {
        const std::size_t start = ids.size() > ctx ? ids.size() - ctx : 0;
        const Matrix logits = model.forward(std::span<const int>(ids).subspan(start));
        const Eigen::RowVectorXd last = logits.row(logits.rows() - 1);
        const int next = sample_token(std::span<const double>(last.data(), static_cast<std::size_t>(last.size())),
                                      gen.temperature, gen.top_p, rng);
        if (next == tokenizer.eos()) break;
        ids.push_back(next);
        produced.push_back(next);
        text = tokenizer.decode(produced);
        if (!gen.stop.empty()) {
            const auto pos = text.find(gen.stop);
            if (pos != std::string::npos) {
                text.resize(pos);
                break;
            }
        }
    }
    return text;
}

}  // namespace roqlora::tinylm
