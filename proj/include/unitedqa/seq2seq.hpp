#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "unitedqa/errors.hpp"
#include "unitedqa/rng.hpp"
#include "unitedqa/tensor.hpp"
#include "unitedqa/tokenizer.hpp"
#include "unitedqa/transformer.hpp"

namespace unitedqa {

struct Seq2SeqConfig {
    std::size_t encoder_layers = 2;
    std::size_t decoder_layers = 2;
    std::size_t hidden_dim = 32;
    std::size_t num_heads = 2;
    std::size_t max_passages = 5;        // K_max; 100 is the documented full-scale default
    std::size_t max_source_length = 64;  // per (question, passage) pair
    std::size_t max_decode_length = 8;
    std::size_t ffn_dim = 64;
    std::size_t vocab_size = 0;
    bool use_attention_bias = true;
    bool tie_output = true;  // output projection = shared embedding, transposed
    std::uint64_t seed = 1;

    void validate() const {
        if (encoder_layers < 1 || decoder_layers < 1 || hidden_dim < 1 || num_heads < 1 ||
            max_passages < 1 || max_source_length < 4 || max_decode_length < 1 || ffn_dim < 1 ||
            vocab_size < 1)
            throw std::invalid_argument("Seq2SeqConfig: all sizes must be >= 1");
        if (hidden_dim % num_heads != 0)
            throw std::invalid_argument("Seq2SeqConfig: hidden_dim must be divisible by num_heads");
    }
};

struct AdvConfig {
    double epsilon = 1e-3;  // perturbation magnitude
    double alpha = 0.5;
    double beta = 0.5;

    void validate() const {
        if (epsilon < 0.0 || alpha < 0.0 || beta < 0.0)
            throw std::invalid_argument("AdvConfig: epsilon, alpha, beta must be >= 0");
    }
};

/// Per-pair encoder outputs concatenated in passage-rank order. Pair k's
/// rows depend only on (question, passage_k).
struct FusionEncoding {
    Tensor memory;  // (M x d)
    std::vector<std::size_t> pair_of_token;                      // pair id per row
    std::vector<std::pair<std::size_t, std::size_t>> boundaries;  // [begin, end) per pair
    std::size_t num_pairs = 0;
};

struct DecoderLayerParams {
    AttentionParams self_attn;
    LayerNormParams ln_self;
    AttentionParams cross_attn;
    LayerNormParams ln_cross;
    FfnParams ffn;
    LayerNormParams ln_ffn;
    Tensor attention_bias;  // (heads x K_max), absent when bias is disabled
};

struct Seq2SeqModel {
    Seq2SeqConfig config;
    Tensor token_embedding;         // shared source/target embedding, (|V| x d)
    TransformerEncoder encoder;     // its token_embedding stays unused (shared one is passed in)
    Tensor decoder_position;        // (max_decode_length x d)
    std::vector<DecoderLayerParams> decoder_layers;
    Tensor output_weight;  // (d x |V|)
    Tensor output_bias;    // (|V|)

    static Seq2SeqModel create(const Seq2SeqConfig& cfg) {
        cfg.validate();
        Seq2SeqModel m;
        m.config = cfg;
        Rng rng(cfg.seed);
        Rng emb_rng = rng.fork(0);
        m.token_embedding =
            detail::init_matrix(emb_rng, cfg.vocab_size, cfg.hidden_dim, 0.1);
        m.encoder.num_layers = cfg.encoder_layers;
        m.encoder.hidden_dim = cfg.hidden_dim;
        m.encoder.num_heads = cfg.num_heads;
        m.encoder.max_sequence_length = cfg.max_source_length;
        m.encoder.ffn_dim = cfg.ffn_dim;
        m.encoder.vocab_size = cfg.vocab_size;
        m.encoder.init(rng.fork(1));
        m.encoder.token_embedding = m.token_embedding;  // shared storage
        Rng dec_rng = rng.fork(2);
        m.decoder_position =
            detail::init_matrix(dec_rng, cfg.max_decode_length, cfg.hidden_dim, 0.1);
        for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
            DecoderLayerParams layer;
            layer.self_attn = detail::init_attention(dec_rng, cfg.hidden_dim, cfg.num_heads);
            layer.ln_self = detail::init_layer_norm(cfg.hidden_dim);
            layer.cross_attn = detail::init_attention(dec_rng, cfg.hidden_dim, cfg.num_heads);
            layer.ln_cross = detail::init_layer_norm(cfg.hidden_dim);
            layer.ffn = detail::init_ffn(dec_rng, cfg.hidden_dim, cfg.ffn_dim);
            layer.ln_ffn = detail::init_layer_norm(cfg.hidden_dim);
            if (cfg.use_attention_bias)
                layer.attention_bias = Tensor::zeros({cfg.num_heads, cfg.max_passages}, true);
            m.decoder_layers.push_back(std::move(layer));
        }
        Rng out_rng = rng.fork(3);
        if (!cfg.tie_output)
            m.output_weight = detail::init_matrix(out_rng, cfg.hidden_dim, cfg.vocab_size);
        m.output_bias = Tensor::zeros({cfg.vocab_size}, true);
        return m;
    }

    NamedParams parameters() const {
        NamedParams out;
        out.emplace_back("token_embedding", token_embedding);
        out.emplace_back("encoder.position_embedding", encoder.position_embedding);
        for (std::size_t l = 0; l < encoder.layers.size(); ++l)
            detail::collect(out, "encoder.layer" + std::to_string(l), encoder.layers[l]);
        out.emplace_back("decoder.position_embedding", decoder_position);
        for (std::size_t l = 0; l < decoder_layers.size(); ++l) {
            const std::string prefix = "decoder.layer" + std::to_string(l);
            detail::collect(out, prefix + ".self_attn", decoder_layers[l].self_attn);
            detail::collect(out, prefix + ".ln_self", decoder_layers[l].ln_self);
            detail::collect(out, prefix + ".cross_attn", decoder_layers[l].cross_attn);
            detail::collect(out, prefix + ".ln_cross", decoder_layers[l].ln_cross);
            detail::collect(out, prefix + ".ffn", decoder_layers[l].ffn);
            detail::collect(out, prefix + ".ln_ffn", decoder_layers[l].ln_ffn);
            if (decoder_layers[l].attention_bias.defined())
                out.emplace_back(prefix + ".attention_bias", decoder_layers[l].attention_bias);
        }
        if (output_weight.defined()) out.emplace_back("output_weight", output_weight);
        out.emplace_back("output_bias", output_bias);
        return out;
    }
};

/// Token ids of one "[CLS] question [SEP] passage [SEP]" encoder pair,
/// passage truncated to the per-pair budget.
inline std::vector<std::size_t> fusion_pair_ids(const Seq2SeqModel& model, const Vocabulary& vocab,
                                                const std::vector<std::string>& question_tokens,
                                                const std::vector<std::string>& passage_tokens) {
    const std::size_t t_max = model.config.max_source_length;
    if (question_tokens.size() + 3 > t_max)
        throw InputError("encode_fusion: question alone exceeds the maximum source length");
    std::vector<std::size_t> ids{Vocabulary::kCls};
    for (const auto& t : question_tokens) ids.push_back(vocab.id(t));
    ids.push_back(Vocabulary::kSep);
    const std::size_t capacity = t_max - question_tokens.size() - 3;
    for (std::size_t i = 0; i < std::min(capacity, passage_tokens.size()); ++i)
        ids.push_back(vocab.id(passage_tokens[i]));
    ids.push_back(Vocabulary::kSep);
    return ids;
}

/// Encodes each (question, passage) pair independently and concatenates the
/// results in passage-rank order.
inline FusionEncoding encode_fusion(const Seq2SeqModel& model, const Vocabulary& vocab,
                                    const std::vector<std::string>& question_tokens,
                                    const std::vector<std::vector<std::string>>& passages,
                                    const Tensor* embedding_override = nullptr) {
    if (passages.empty()) throw std::invalid_argument("encode_fusion: at least one passage required");
    if (passages.size() > model.config.max_passages)
        throw std::invalid_argument("encode_fusion: passage count exceeds max_passages");
    FusionEncoding enc;
    enc.num_pairs = passages.size();
    std::vector<Tensor> parts;
    std::size_t offset = 0;
    const Tensor& emb = embedding_override ? *embedding_override : model.token_embedding;
    for (std::size_t k = 0; k < passages.size(); ++k) {
        const auto ids = fusion_pair_ids(model, vocab, question_tokens, passages[k]);
        parts.push_back(model.encoder.forward(ids, &emb));
        enc.boundaries.emplace_back(offset, offset + ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) enc.pair_of_token.push_back(k);
        offset += ids.size();
    }
    enc.memory = parts.size() == 1 ? parts[0] : concat(parts);
    return enc;
}

/// Cross-attention with the per-passage additive bias: head h's scores gain
/// bias[h][k] for every memory token of pair k before the softmax over the
/// whole concatenation.
inline Tensor biased_cross_attention(const Tensor& queries, const FusionEncoding& encoding,
                                     const AttentionParams& params, const Tensor& bias) {
    std::optional<std::vector<Tensor>> head_biases;
    if (bias.defined()) {
        if (bias.rank() != 2 || bias.shape()[0] != params.heads.size())
            throw std::invalid_argument("biased_cross_attention: bias must be (heads x K_max)");
        if (encoding.num_pairs > bias.shape()[1])
            throw std::invalid_argument("biased_cross_attention: pair index beyond bias rows");
        head_biases.emplace();
        for (std::size_t h = 0; h < params.heads.size(); ++h) {
            Tensor row = reshape(slice(bias, h, h + 1), {bias.shape()[1]});
            head_biases->push_back(gather(row, encoding.pair_of_token));
        }
    }
    return multi_head_attention(queries, encoding.memory, params, nullptr,
                                head_biases ? &*head_biases : nullptr);
}

/// Per-head attention weight matrices of one biased cross-attention block,
/// for diagnostics and tests.
inline std::vector<Tensor> cross_attention_weights(const Tensor& queries,
                                                   const FusionEncoding& encoding,
                                                   const AttentionParams& params,
                                                   const Tensor& bias) {
    const std::size_t dh = params.heads[0].wq.shape()[1];
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> out;
    for (std::size_t h = 0; h < params.heads.size(); ++h) {
        Tensor q = matmul(queries, params.heads[h].wq);
        Tensor k = matmul(encoding.memory, params.heads[h].wk);
        Tensor scores = scale(matmul_nt(q, k), inv_sqrt_dh);
        if (bias.defined()) {
            Tensor row = reshape(slice(bias, h, h + 1), {bias.shape()[1]});
            scores = add_rows(scores, gather(row, encoding.pair_of_token));
        }
        out.push_back(softmax(scores, 1));
    }
    return out;
}

/// Teacher-forced decoder pass: target_input is [BOS] y_1 ... y_{n-1};
/// returns per-step vocabulary logits (n x |V|).
inline Tensor decoder_forward(const Seq2SeqModel& model, const FusionEncoding& encoding,
                              const std::vector<std::size_t>& target_input,
                              const Tensor* embedding_override = nullptr) {
    if (target_input.empty()) throw std::invalid_argument("decoder_forward: empty target");
    if (target_input.size() > model.config.max_decode_length)
        throw std::invalid_argument("decoder_forward: target longer than max decode length");
    const Tensor& emb = embedding_override ? *embedding_override : model.token_embedding;
    const std::size_t n = target_input.size();
    Tensor x = add(gather(emb, target_input), slice(model.decoder_position, 0, n));
    const Tensor mask = causal_mask(n);
    for (const auto& layer : model.decoder_layers) {
        std::vector<Tensor> offsets(model.config.num_heads, mask);
        Tensor self_out = multi_head_attention(x, x, layer.self_attn, &offsets);
        x = layer_norm(add(x, self_out), layer.ln_self.gain, layer.ln_self.bias);
        Tensor cross_out = biased_cross_attention(x, encoding, layer.cross_attn, layer.attention_bias);
        x = layer_norm(add(x, cross_out), layer.ln_cross.gain, layer.ln_cross.bias);
        Tensor f = feed_forward(x, layer.ffn);
        x = layer_norm(add(x, f), layer.ln_ffn.gain, layer.ln_ffn.bias);
    }
    if (model.config.tie_output) return add_rows(matmul_nt(x, emb), model.output_bias);
    return add_rows(matmul(x, model.output_weight), model.output_bias);
}

/// Teacher-forced sum of per-token log-probabilities of `target` (which must
/// end with [EOS]).
inline Tensor seq2seq_loss(const Seq2SeqModel& model, const Vocabulary& vocab,
                           const std::vector<std::string>& question_tokens,
                           const std::vector<std::vector<std::string>>& passages,
                           const std::vector<std::size_t>& target,
                           const Tensor* embedding_override = nullptr) {
    if (target.empty() || target.back() != Vocabulary::kEos)
        throw std::invalid_argument("seq2seq_loss: target must be non-empty and end with [EOS]");
    for (auto id : target)
        if (id >= model.config.vocab_size) throw InputError("seq2seq_loss: token outside vocabulary");
    FusionEncoding enc = encode_fusion(model, vocab, question_tokens, passages, embedding_override);
    std::vector<std::size_t> dec_input{Vocabulary::kBos};
    dec_input.insert(dec_input.end(), target.begin(), target.end() - 1);
    Tensor logits = decoder_forward(model, enc, dec_input, embedding_override);
    Tensor log_probs = log_softmax(logits, 1);
    return reduce_sum(pick(log_probs, target));
}

struct DecodeResult {
    std::vector<std::size_t> token_ids;  // without the final [EOS]
    std::string text;
    double score = 0.0;  // mean per-token log-probability, [EOS] step included
};

/// Greedy decoding: argmax token per step (lowest id wins ties) until [EOS]
/// or the decode-length cap.
inline DecodeResult greedy_decode(const Seq2SeqModel& model, const Vocabulary& vocab,
                                  const std::vector<std::string>& question_tokens,
                                  const std::vector<std::vector<std::string>>& passages) {
    FusionEncoding enc = encode_fusion(model, vocab, question_tokens, passages);
    DecodeResult out;
    std::vector<std::size_t> dec_input{Vocabulary::kBos};
    double log_prob_sum = 0.0;
    std::size_t steps = 0;
    while (dec_input.size() <= model.config.max_decode_length) {
        Tensor logits = decoder_forward(model, enc, dec_input);
        const std::size_t last = dec_input.size() - 1;
        Tensor row_logp = log_softmax(logits, 1);
        std::size_t best = 0;
        for (std::size_t v = 1; v < model.config.vocab_size; ++v)
            if (logits.at(last, v) > logits.at(last, best)) best = v;
        log_prob_sum += row_logp.at(last, best);
        ++steps;
        if (best == Vocabulary::kEos) break;
        out.token_ids.push_back(best);
        if (dec_input.size() == model.config.max_decode_length) break;
        dec_input.push_back(best);
    }
    for (std::size_t i = 0; i < out.token_ids.size(); ++i) {
        if (i) out.text += ' ';
        out.text += vocab.token(out.token_ids[i]);
    }
    out.score = steps > 0 ? log_prob_sum / static_cast<double>(steps) : 0.0;
    return out;
}

// --------------------------- adversarial training ---------------------------

struct PerturbedEmbedding {
    std::vector<double> values;  // V-hat entries
    bool perturbed = false;
    double gradient_norm = 0.0;
};

/// V-hat = V - eps * grad / ||grad||_F. A vanishing gradient norm leaves the
/// embedding untouched (reported via `perturbed`).
inline PerturbedEmbedding adversarial_perturb(const std::vector<double>& embedding,
                                              const std::vector<double>& gradient, double eps) {
    if (embedding.size() != gradient.size())
        throw std::invalid_argument("adversarial_perturb: shape mismatch");
    PerturbedEmbedding out;
    out.values = embedding;
    double norm_sq = 0.0;
    for (double g : gradient) norm_sq += g * g;
    out.gradient_norm = std::sqrt(norm_sq);
    if (out.gradient_norm < 1e-12 || eps == 0.0) return out;
    const double scale = eps / out.gradient_norm;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= scale * gradient[i];
    out.perturbed = true;
    return out;
}

struct GenerativeLoss {
    Tensor total;  // minimized: -(alpha * L + beta * L_AT)
    double l = 0.0;
    double l_at = 0.0;
    bool perturbed = false;
};

/// Objective with an explicitly provided embedding offset (the stop-gradient
/// direction). Deterministic in the offset, so directly gradient-checkable,
/// and exactly what the adversarial gradient contract differentiates.
inline GenerativeLoss generative_loss_with_offset(const Seq2SeqModel& model, const Vocabulary& vocab,
                                                  const std::vector<std::string>& question_tokens,
                                                  const std::vector<std::vector<std::string>>& passages,
                                                  const std::vector<std::size_t>& target,
                                                  const AdvConfig& cfg,
                                                  const std::vector<double>* embedding_offset) {
    cfg.validate();
    Tensor l = seq2seq_loss(model, vocab, question_tokens, passages, target);
    GenerativeLoss out;
    out.l = l.item();
    if (!embedding_offset) {
        out.l_at = out.l;
        out.total = neg(scale(l, cfg.alpha + cfg.beta));
        return out;
    }
    Tensor offset = Tensor::constant(model.token_embedding.shape(), *embedding_offset);
    Tensor v_hat = add(model.token_embedding, offset);
    Tensor l_at = seq2seq_loss(model, vocab, question_tokens, passages, target, &v_hat);
    out.l_at = l_at.item();
    out.perturbed = true;
    out.total = neg(add(scale(l, cfg.alpha), scale(l_at, cfg.beta)));
    return out;
}

/// Full adversarial objective: computes grad_V of the clean loss, builds the
/// stop-gradient perturbation, and mixes clean and adversarial likelihoods.
inline GenerativeLoss loss_total_generative(const Seq2SeqModel& model, const Vocabulary& vocab,
                                            const std::vector<std::string>& question_tokens,
                                            const std::vector<std::vector<std::string>>& passages,
                                            const std::vector<std::size_t>& target,
                                            const AdvConfig& cfg) {
    cfg.validate();
    if (cfg.epsilon == 0.0)
        return generative_loss_with_offset(model, vocab, question_tokens, passages, target, cfg,
                                           nullptr);
    Tensor probe = seq2seq_loss(model, vocab, question_tokens, passages, target);
    backward(probe);
    const std::vector<double>& grad_v = model.token_embedding.grad();
    PerturbedEmbedding hat =
        adversarial_perturb(model.token_embedding.values(), grad_v, cfg.epsilon);
    if (!hat.perturbed) {
        std::cerr << "loss_total_generative: vanishing embedding gradient, skipping perturbation\n";
        return generative_loss_with_offset(model, vocab, question_tokens, passages, target, cfg,
                                           nullptr);
    }
    std::vector<double> offset(hat.values.size());
    for (std::size_t i = 0; i < offset.size(); ++i)
        offset[i] = hat.values[i] - model.token_embedding.values()[i];
    return generative_loss_with_offset(model, vocab, question_tokens, passages, target, cfg,
                                       &offset);
}

}  // namespace unitedqa
