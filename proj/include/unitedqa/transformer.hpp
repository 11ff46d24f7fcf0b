#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "unitedqa/checkpoint.hpp"
#include "unitedqa/rng.hpp"
#include "unitedqa/tensor.hpp"

namespace unitedqa {

struct LayerNormParams {
    Tensor gain;
    Tensor bias;
};

struct AttentionHead {
    Tensor wq, wk, wv;  // (d x dh)
    Tensor wo;          // (dh x d)
};

struct AttentionParams {
    std::vector<AttentionHead> heads;
};

struct FfnParams {
    Tensor w1, b1;  // (d x f), (f)
    Tensor w2, b2;  // (f x d), (d)
};

struct EncoderLayerParams {
    AttentionParams attn;
    LayerNormParams ln_attn;
    FfnParams ffn;
    LayerNormParams ln_ffn;
};

namespace detail {

/// Fan-in scaled normal init; at toy widths the common fixed 0.02 leaves
/// attention logits too flat to train from scratch.
inline Tensor init_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(rows));
    return Tensor::leaf({rows, cols}, rng.normal_vector(rows * cols, stddev), true);
}

inline Tensor init_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
    return Tensor::leaf({rows, cols}, rng.normal_vector(rows * cols, stddev), true);
}

inline Tensor init_vector(Rng& rng, std::size_t n, double stddev = 0.1) {
    return Tensor::leaf({n}, rng.normal_vector(n, stddev), true);
}

inline LayerNormParams init_layer_norm(std::size_t d) {
    return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
}

inline AttentionParams init_attention(Rng& rng, std::size_t d, std::size_t heads) {
    AttentionParams p;
    const std::size_t dh = d / heads;
    for (std::size_t h = 0; h < heads; ++h)
        p.heads.push_back({init_matrix(rng, d, dh), init_matrix(rng, d, dh),
                           init_matrix(rng, d, dh), init_matrix(rng, dh, d)});
    return p;
}

inline FfnParams init_ffn(Rng& rng, std::size_t d, std::size_t f) {
    return {init_matrix(rng, d, f), Tensor::zeros({f}, true), init_matrix(rng, f, d),
            Tensor::zeros({d}, true)};
}

inline void collect(NamedParams& out, const std::string& prefix, const LayerNormParams& p) {
    out.emplace_back(prefix + ".gain", p.gain);
    out.emplace_back(prefix + ".bias", p.bias);
}

inline void collect(NamedParams& out, const std::string& prefix, const AttentionParams& p) {
    for (std::size_t h = 0; h < p.heads.size(); ++h) {
        const std::string hp = prefix + ".head" + std::to_string(h);
        out.emplace_back(hp + ".wq", p.heads[h].wq);
        out.emplace_back(hp + ".wk", p.heads[h].wk);
        out.emplace_back(hp + ".wv", p.heads[h].wv);
        out.emplace_back(hp + ".wo", p.heads[h].wo);
    }
}

inline void collect(NamedParams& out, const std::string& prefix, const FfnParams& p) {
    out.emplace_back(prefix + ".w1", p.w1);
    out.emplace_back(prefix + ".b1", p.b1);
    out.emplace_back(prefix + ".w2", p.w2);
    out.emplace_back(prefix + ".b2", p.b2);
}

inline void collect(NamedParams& out, const std::string& prefix, const EncoderLayerParams& p) {
    collect(out, prefix + ".attn", p.attn);
    collect(out, prefix + ".ln_attn", p.ln_attn);
    collect(out, prefix + ".ffn", p.ffn);
    collect(out, prefix + ".ln_ffn", p.ln_ffn);
}

}  // namespace detail

/// Multi-head attention. `queries` is (N x d), `memory` is (M x d).
/// `score_offsets`, when given, holds one (N x M) additive constant per head
/// (causal masks). `head_biases`, when given, holds one length-M vector per
/// head added to every query row's scores before the softmax.
inline Tensor multi_head_attention(const Tensor& queries, const Tensor& memory,
                                   const AttentionParams& params,
                                   const std::vector<Tensor>* score_offsets = nullptr,
                                   const std::vector<Tensor>* head_biases = nullptr) {
    const std::size_t dh = params.heads[0].wq.shape()[1];
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor out;
    for (std::size_t h = 0; h < params.heads.size(); ++h) {
        const auto& head = params.heads[h];
        Tensor q = matmul(queries, head.wq);
        Tensor k = matmul(memory, head.wk);
        Tensor v = matmul(memory, head.wv);
        Tensor scores = scale(matmul_nt(q, k), inv_sqrt_dh);
        if (score_offsets) scores = add(scores, (*score_offsets)[h]);
        if (head_biases) scores = add_rows(scores, (*head_biases)[h]);
        Tensor weights = softmax(scores, 1);
        Tensor head_out = matmul(matmul(weights, v), head.wo);
        out = out.defined() ? add(out, head_out) : head_out;
    }
    return out;
}

/// Lower-triangular 0 / upper-triangular large-negative constant used to
/// keep decoder self-attention causal.
inline Tensor causal_mask(std::size_t n) {
    std::vector<double> m(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = -1e9;
    return Tensor::constant({n, n}, std::move(m));
}

inline Tensor feed_forward(const Tensor& x, const FfnParams& p) {
    // tanh keeps the whole network smooth, so central-difference gradient
    // checks hold everywhere
    return add_rows(matmul(tanh(add_rows(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

inline Tensor encoder_layer_forward(const Tensor& x, const EncoderLayerParams& layer) {
    Tensor attn = multi_head_attention(x, x, layer.attn);
    Tensor h = layer_norm(add(x, attn), layer.ln_attn.gain, layer.ln_attn.bias);
    Tensor f = feed_forward(h, layer.ffn);
    return layer_norm(add(h, f), layer.ln_ffn.gain, layer.ln_ffn.bias);
}

/// Token + learned-position embedding stack of post-norm encoder layers.
struct TransformerEncoder {
    std::size_t num_layers = 2;
    std::size_t hidden_dim = 32;
    std::size_t num_heads = 2;
    std::size_t max_sequence_length = 64;
    std::size_t ffn_dim = 64;
    std::size_t vocab_size = 0;

    Tensor token_embedding;     // (|V| x d)
    Tensor position_embedding;  // (T x d)
    std::vector<EncoderLayerParams> layers;

    void init(Rng rng) {
        token_embedding = detail::init_matrix(rng, vocab_size, hidden_dim, 0.1);
        position_embedding = detail::init_matrix(rng, max_sequence_length, hidden_dim, 0.1);
        layers.clear();
        for (std::size_t l = 0; l < num_layers; ++l)
            layers.push_back({detail::init_attention(rng, hidden_dim, num_heads),
                              detail::init_layer_norm(hidden_dim),
                              detail::init_ffn(rng, hidden_dim, ffn_dim),
                              detail::init_layer_norm(hidden_dim)});
    }

    /// Hidden states for a token-id sequence. `embedding_override` substitutes
    /// the token embedding matrix; `input_noise` is added to the looked-up
    /// token embeddings before positions.
    Tensor forward(const std::vector<std::size_t>& ids,
                   const Tensor* embedding_override = nullptr,
                   const Tensor* input_noise = nullptr) const {
        if (ids.empty()) throw std::invalid_argument("encoder: empty input");
        if (ids.size() > max_sequence_length)
            throw std::invalid_argument("encoder: input longer than maximum sequence length");
        const Tensor& emb = embedding_override ? *embedding_override : token_embedding;
        Tensor x = gather(emb, ids);
        if (input_noise) x = add(x, *input_noise);
        x = add(x, slice(position_embedding, 0, ids.size()));
        for (const auto& layer : layers) x = encoder_layer_forward(x, layer);
        return x;
    }

    void collect_params(NamedParams& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".token_embedding", token_embedding);
        out.emplace_back(prefix + ".position_embedding", position_embedding);
        for (std::size_t l = 0; l < layers.size(); ++l)
            detail::collect(out, prefix + ".layer" + std::to_string(l), layers[l]);
    }
};

}  // namespace unitedqa
