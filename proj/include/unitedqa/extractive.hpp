#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "unitedqa/errors.hpp"
#include "unitedqa/eval.hpp"
#include "unitedqa/rng.hpp"
#include "unitedqa/tensor.hpp"
#include "unitedqa/tokenizer.hpp"
#include "unitedqa/transformer.hpp"

namespace unitedqa {

/// Raised when a question has no correct span in the relevant probability
/// space; trainers catch it and skip the question.
struct NoCorrectSpan : std::runtime_error {
    explicit NoCorrectSpan(const std::string& what) : std::runtime_error(what) {}
};

struct EncoderConfig {
    std::size_t num_layers = 2;
    std::size_t hidden_dim = 32;
    std::size_t num_heads = 2;
    std::size_t max_sequence_length = 64;
    std::size_t ffn_dim = 64;
    std::size_t vocab_size = 0;
    std::uint64_t seed = 1;

    void validate() const {
        if (num_layers < 1 || hidden_dim < 1 || num_heads < 1 || max_sequence_length < 1 ||
            ffn_dim < 1 || vocab_size < 1)
            throw std::invalid_argument("EncoderConfig: all sizes must be >= 1");
        if (hidden_dim % num_heads != 0)
            throw std::invalid_argument("EncoderConfig: hidden_dim must be divisible by num_heads");
    }
};

struct PdrConfig {
    double noise_scale = 1e-3;  // c
    double gamma = 4.0;         // regularization weight, candidates {4, 8}

    void validate() const {
        if (noise_scale < 0.0) throw std::invalid_argument("PdrConfig: noise_scale must be >= 0");
        if (gamma < 0.0) throw std::invalid_argument("PdrConfig: gamma must be >= 0");
    }
};

/// One encoded "[CLS] question [SEP] passage [SEP]" pair. Position 0 (the
/// [CLS] slot) doubles as the NULL position; passage_positions lists the
/// hidden positions carrying passage tokens, in passage order.
struct EncodedPair {
    std::vector<std::size_t> token_ids;
    Tensor hidden;  // (T_used x d)
    std::size_t passage_index = 0;
    std::vector<std::size_t> passage_positions;   // hidden position of passage token i
    std::vector<std::string> passage_tokens;      // the encoded (possibly truncated) view
    std::size_t null_position = 0;
};

/// Begin/end scores for every position of one encoded pair, NULL included.
struct SpanLogits {
    std::size_t passage_index = 0;
    Tensor begin_scores;  // (T_used)
    Tensor end_scores;    // (T_used)
    std::vector<std::size_t> passage_positions;
    std::vector<std::string> passage_tokens;
    std::size_t null_position = 0;
};

enum class ProbSpace { PassageLevel, MultiPassageLevel };

/// Begin/end distributions over one probability space's position set.
/// Entries are (passage, hidden position) pairs; a passage-level table leads
/// with its NULL entry. log_pb / log_pe stay differentiable.
struct ProbTable {
    ProbSpace space = ProbSpace::MultiPassageLevel;
    std::size_t passage_index = 0;  // meaningful for PassageLevel only

    struct Entry {
        std::size_t passage_index;
        std::size_t hidden_position;
        std::size_t passage_token;  // index into the passage's token list; unused for NULL
        bool is_null;
    };
    std::vector<Entry> entries;
    Tensor log_pb, log_pe;  // vectors over entries
    double log_z_b = 0.0, log_z_e = 0.0;

    double pb(std::size_t i) const { return std::exp(log_pb.at(i)); }
    double pe(std::size_t i) const { return std::exp(log_pe.at(i)); }
    double z_b() const { return std::exp(log_z_b); }
    double z_e() const { return std::exp(log_z_e); }

    std::optional<std::size_t> find(std::size_t passage, std::size_t passage_token) const {
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (!entries[i].is_null && entries[i].passage_index == passage &&
                entries[i].passage_token == passage_token)
                return i;
        return std::nullopt;
    }

    std::optional<std::size_t> null_entry() const {
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (entries[i].is_null) return i;
        return std::nullopt;
    }
};

/// Token-index span within one passage, end inclusive.
struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// Per-passage lists of spans matching a gold answer string.
struct SpanSet {
    std::vector<std::vector<Span>> per_passage;

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& v : per_passage) n += v.size();
        return n;
    }
};

// ------------------------------ reader model -------------------------------

struct ExtractiveReader {
    EncoderConfig config;
    TransformerEncoder encoder;
    Tensor begin_weight;  // w_b, (d)
    Tensor end_weight;    // w_e, (d)

    static ExtractiveReader create(const EncoderConfig& cfg) {
        cfg.validate();
        ExtractiveReader r;
        r.config = cfg;
        r.encoder.num_layers = cfg.num_layers;
        r.encoder.hidden_dim = cfg.hidden_dim;
        r.encoder.num_heads = cfg.num_heads;
        r.encoder.max_sequence_length = cfg.max_sequence_length;
        r.encoder.ffn_dim = cfg.ffn_dim;
        r.encoder.vocab_size = cfg.vocab_size;
        Rng rng(cfg.seed);
        r.encoder.init(rng.fork(0));
        Rng head_rng = rng.fork(1);
        r.begin_weight = detail::init_vector(head_rng, cfg.hidden_dim);
        r.end_weight = detail::init_vector(head_rng, cfg.hidden_dim);
        return r;
    }

    NamedParams parameters() const {
        NamedParams out;
        encoder.collect_params(out, "encoder");
        out.emplace_back("begin_weight", begin_weight);
        out.emplace_back("end_weight", end_weight);
        return out;
    }

    /// How many tokens of a passage fit after [CLS] question [SEP] ... [SEP].
    std::size_t passage_capacity(std::size_t question_tokens) const {
        const std::size_t overhead = question_tokens + 3;
        if (overhead > config.max_sequence_length) return 0;
        return config.max_sequence_length - overhead;
    }
};

/// Encodes "[CLS] question [SEP] passage [SEP]"; the passage is truncated to
/// fit, the question never is. `input_noise`, when given, must cover the
/// full encoded length (one row per token).
inline EncodedPair encode_pair(const ExtractiveReader& reader, const Vocabulary& vocab,
                               const std::vector<std::string>& question_tokens,
                               const std::vector<std::string>& passage_tokens,
                               std::size_t passage_index, const Tensor* input_noise = nullptr) {
    const std::size_t capacity = reader.passage_capacity(question_tokens.size());
    if (question_tokens.size() + 3 > reader.config.max_sequence_length)
        throw InputError("encode_pair: question alone exceeds the maximum sequence length");
    EncodedPair pair;
    pair.passage_index = passage_index;
    pair.token_ids.push_back(Vocabulary::kCls);
    for (const auto& t : question_tokens) pair.token_ids.push_back(vocab.id(t));
    pair.token_ids.push_back(Vocabulary::kSep);
    const std::size_t keep = std::min(capacity, passage_tokens.size());
    for (std::size_t i = 0; i < keep; ++i) {
        pair.passage_positions.push_back(pair.token_ids.size());
        pair.passage_tokens.push_back(passage_tokens[i]);
        pair.token_ids.push_back(vocab.id(passage_tokens[i]));
    }
    pair.token_ids.push_back(Vocabulary::kSep);
    pair.null_position = 0;
    pair.hidden = reader.encoder.forward(pair.token_ids, nullptr, input_noise);
    return pair;
}

/// s_b(i) = w_b . h_i and s_e(j) = w_e . h_j for every position, NULL
/// included.
inline SpanLogits span_logits(const EncodedPair& pair, const Tensor& begin_weight,
                              const Tensor& end_weight) {
    const std::size_t d = pair.hidden.shape()[1];
    if (begin_weight.size() != d || end_weight.size() != d)
        throw std::invalid_argument("span_logits: weight dimension mismatch");
    const std::size_t n = pair.hidden.shape()[0];
    SpanLogits out;
    out.passage_index = pair.passage_index;
    out.begin_scores = reshape(matmul(pair.hidden, reshape(begin_weight, {d, 1})), {n});
    out.end_scores = reshape(matmul(pair.hidden, reshape(end_weight, {d, 1})), {n});
    out.passage_positions = pair.passage_positions;
    out.passage_tokens = pair.passage_tokens;
    out.null_position = pair.null_position;
    return out;
}

// ------------------------- probability space tables -------------------------

/// Passage-level space: the passage's positions plus its NULL position.
inline ProbTable normalize_passage_level(const SpanLogits& logits) {
    ProbTable t;
    t.space = ProbSpace::PassageLevel;
    t.passage_index = logits.passage_index;
    std::vector<std::size_t> positions{logits.null_position};
    t.entries.push_back({logits.passage_index, logits.null_position, 0, true});
    for (std::size_t i = 0; i < logits.passage_positions.size(); ++i) {
        positions.push_back(logits.passage_positions[i]);
        t.entries.push_back({logits.passage_index, logits.passage_positions[i], i, false});
    }
    Tensor b = gather(logits.begin_scores, positions);
    Tensor e = gather(logits.end_scores, positions);
    t.log_pb = log_softmax(b, 0);
    t.log_pe = log_softmax(e, 0);
    t.log_z_b = logsumexp(b).item();
    t.log_z_e = logsumexp(e).item();
    return t;
}

/// Multi-passage space: the union of all passages' answer positions. NULL
/// positions are excluded, matching a normalizer that sums over passage
/// positions only.
inline ProbTable normalize_multi_passage(const std::vector<SpanLogits>& logits) {
    if (logits.empty()) throw std::invalid_argument("normalize: at least one passage required");
    ProbTable t;
    t.space = ProbSpace::MultiPassageLevel;
    std::vector<Tensor> b_parts, e_parts;
    for (const auto& l : logits) {
        if (l.passage_positions.empty()) continue;
        b_parts.push_back(gather(l.begin_scores, l.passage_positions));
        e_parts.push_back(gather(l.end_scores, l.passage_positions));
        for (std::size_t i = 0; i < l.passage_positions.size(); ++i)
            t.entries.push_back({l.passage_index, l.passage_positions[i], i, false});
    }
    if (t.entries.empty())
        throw std::invalid_argument("normalize: empty position set across all passages");
    Tensor b = b_parts.size() == 1 ? b_parts[0] : concat(b_parts);
    Tensor e = e_parts.size() == 1 ? e_parts[0] : concat(e_parts);
    t.log_pb = log_softmax(b, 0);
    t.log_pe = log_softmax(e, 0);
    t.log_z_b = logsumexp(b).item();
    t.log_z_e = logsumexp(e).item();
    return t;
}

/// P_s(i, j) = P_b(i) * P_e(j) for entry indices of the table's space.
inline double span_prob(const ProbTable& table, std::size_t begin_entry, std::size_t end_entry) {
    if (begin_entry >= table.entries.size() || end_entry >= table.entries.size())
        throw std::invalid_argument("span_prob: position outside the probability space");
    return table.pb(begin_entry) * table.pe(end_entry);
}

/// P_a(y) = sum of span probabilities of the string's spans.
inline double answer_string_score(const ProbTable& table,
                                  const std::vector<std::pair<std::size_t, std::size_t>>& spans) {
    double score = 0.0;
    for (const auto& [b, e] : spans) score += span_prob(table, b, e);
    return score;
}

/// All token windows (up to max_span_length tokens) whose normalized surface
/// form equals a normalized gold answer.
inline SpanSet find_correct_spans(const std::vector<std::vector<std::string>>& passages,
                                  const std::vector<std::string>& gold_answers,
                                  std::size_t max_span_length) {
    if (gold_answers.empty())
        throw std::invalid_argument("find_correct_spans: gold answers must be non-empty");
    std::vector<std::string> golds;
    for (const auto& g : gold_answers) {
        const std::string n = normalize_answer(g);
        if (!n.empty()) golds.push_back(n);
    }
    SpanSet out;
    out.per_passage.resize(passages.size());
    for (std::size_t k = 0; k < passages.size(); ++k) {
        const auto& tokens = passages[k];
        for (std::size_t b = 0; b < tokens.size(); ++b) {
            std::string window;
            for (std::size_t e = b; e < tokens.size() && e - b < max_span_length; ++e) {
                if (e > b) window += ' ';
                window += tokens[e];
                const std::string normalized = normalize_answer(window);
                if (normalized.empty()) continue;
                for (const auto& g : golds)
                    if (normalized == g) {
                        out.per_passage[k].push_back({b, e});
                        break;
                    }
            }
        }
    }
    return out;
}

namespace detail {

/// Maps a span set into (begin, end) entry-index pairs of a table, keeping
/// only spans that live inside the table's space.
inline std::vector<std::pair<std::size_t, std::size_t>> table_span_entries(const ProbTable& table,
                                                                           const SpanSet& spans) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t k = 0; k < spans.per_passage.size(); ++k) {
        if (table.space == ProbSpace::PassageLevel && k != table.passage_index) continue;
        for (const auto& s : spans.per_passage[k]) {
            const auto b = table.find(k, s.begin);
            const auto e = table.find(k, s.end);
            if (b && e) out.emplace_back(*b, *e);
        }
    }
    return out;
}

inline Tensor span_log_probs(const ProbTable& table,
                             const std::vector<std::pair<std::size_t, std::size_t>>& entries) {
    std::vector<std::size_t> b_idx, e_idx;
    b_idx.reserve(entries.size());
    e_idx.reserve(entries.size());
    for (const auto& [b, e] : entries) {
        b_idx.push_back(b);
        e_idx.push_back(e);
    }
    return add(gather(table.log_pb, b_idx), gather(table.log_pe, e_idx));
}

}  // namespace detail

/// log sum of correct-span probabilities (marginal log-likelihood).
inline Tensor loss_mml(const ProbTable& table, const SpanSet& spans) {
    const auto entries = detail::table_span_entries(table, spans);
    if (entries.empty()) throw NoCorrectSpan("loss_mml: no correct span in this space");
    return logsumexp(detail::span_log_probs(table, entries));
}

/// log of the single most probable correct span.
inline Tensor loss_hardem(const ProbTable& table, const SpanSet& spans) {
    const auto entries = detail::table_span_entries(table, spans);
    if (entries.empty()) throw NoCorrectSpan("loss_hardem: no correct span in this space");
    return reduce_max(detail::span_log_probs(table, entries));
}

/// Multi-passage HardEM term plus the mean of per-passage MML terms. A
/// passage without a correct span contributes its (NULL, NULL) span at
/// passage level.
inline Tensor loss_multi_objective(const std::vector<SpanLogits>& logits, const SpanSet& spans) {
    if (logits.empty()) throw std::invalid_argument("loss_multi_objective: no passages");
    if (spans.per_passage.size() != logits.size())
        throw std::invalid_argument("loss_multi_objective: span set / passage count mismatch");
    const ProbTable multi = normalize_multi_passage(logits);
    Tensor hard = loss_hardem(multi, spans);  // throws NoCorrectSpan when empty everywhere
    Tensor passage_sum;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        const ProbTable pk = normalize_passage_level(logits[k]);
        Tensor term;
        if (!spans.per_passage[k].empty()) {
            term = loss_mml(pk, spans);
        } else {
            const std::size_t null_idx = *pk.null_entry();
            term = add(gather(pk.log_pb, {null_idx}), gather(pk.log_pe, {null_idx}));
            term = reshape(term, {1});
            term = reduce_sum(term);
        }
        passage_sum = passage_sum.defined() ? add(passage_sum, term) : term;
    }
    return add(hard, scale(passage_sum, 1.0 / static_cast<double>(logits.size())));
}

/// Squared Hellinger distance between the clean and noisy begin
/// distributions plus the same for the end distributions, both at the
/// multi-passage level.
inline Tensor loss_pdr(const std::vector<SpanLogits>& logits_clean,
                       const std::vector<SpanLogits>& logits_noisy) {
    const ProbTable clean = normalize_multi_passage(logits_clean);
    const ProbTable noisy = normalize_multi_passage(logits_noisy);
    if (clean.entries.size() != noisy.entries.size())
        throw std::invalid_argument("loss_pdr: position sets differ");
    for (std::size_t i = 0; i < clean.entries.size(); ++i)
        if (clean.entries[i].passage_index != noisy.entries[i].passage_index ||
            clean.entries[i].hidden_position != noisy.entries[i].hidden_position)
            throw std::invalid_argument("loss_pdr: position sets differ");
    auto h2 = [](const Tensor& log_p, const Tensor& log_q) {
        Tensor diff = sub(sqrt(exp(log_p)), sqrt(exp(log_q)));
        return scale(reduce_sum(mul(diff, diff)), 0.5);
    };
    return add(h2(clean.log_pb, noisy.log_pb), h2(clean.log_pe, noisy.log_pe));
}

// ------------------------------ full objective ------------------------------

/// A training-ready question: token views already truncated to what the
/// encoder will actually see, with the matching span set.
struct ExtractiveExample {
    std::vector<std::string> question_tokens;
    std::vector<std::vector<std::string>> passages;  // truncated views
    SpanSet spans;
};

/// Builds the truncated passage views and finds correct spans inside them.
inline ExtractiveExample prepare_extractive_example(
    const ExtractiveReader& reader, const std::vector<std::string>& question_tokens,
    const std::vector<std::vector<std::string>>& passages,
    const std::vector<std::string>& gold_answers, std::size_t max_span_length) {
    ExtractiveExample ex;
    ex.question_tokens = question_tokens;
    const std::size_t capacity = reader.passage_capacity(question_tokens.size());
    for (const auto& p : passages) {
        std::vector<std::string> view(p.begin(),
                                      p.begin() + static_cast<std::ptrdiff_t>(
                                                      std::min(capacity, p.size())));
        ex.passages.push_back(std::move(view));
    }
    ex.spans = find_correct_spans(ex.passages, gold_answers, max_span_length);
    return ex;
}

struct ExtractiveLoss {
    Tensor total;    // minimized: -L_EXT + gamma * L_PDR
    double l_ext;    // log-likelihood value
    double l_pdr;    // divergence value (0 when disabled)
};

/// Assembles the full extractive objective with an explicit noise sample
/// (one (T_used x d) row block per passage). Deterministic given the noise,
/// so it is directly gradient-checkable.
inline ExtractiveLoss extractive_loss_with_noise(const ExtractiveReader& reader,
                                                 const Vocabulary& vocab,
                                                 const ExtractiveExample& example,
                                                 const PdrConfig& config,
                                                 const std::vector<Tensor>* noise) {
    config.validate();
    std::vector<SpanLogits> clean;
    for (std::size_t k = 0; k < example.passages.size(); ++k) {
        EncodedPair pair =
            encode_pair(reader, vocab, example.question_tokens, example.passages[k], k);
        clean.push_back(span_logits(pair, reader.begin_weight, reader.end_weight));
    }
    Tensor l_ext = loss_multi_objective(clean, example.spans);
    ExtractiveLoss out;
    out.l_ext = l_ext.item();
    out.l_pdr = 0.0;
    Tensor total = neg(l_ext);
    if (noise) {
        std::vector<SpanLogits> noisy;
        for (std::size_t k = 0; k < example.passages.size(); ++k) {
            EncodedPair pair = encode_pair(reader, vocab, example.question_tokens,
                                           example.passages[k], k, &(*noise)[k]);
            noisy.push_back(span_logits(pair, reader.begin_weight, reader.end_weight));
        }
        Tensor pdr = loss_pdr(clean, noisy);
        out.l_pdr = pdr.item();
        total = add(total, scale(pdr, config.gamma));
    }
    out.total = total;
    return out;
}

/// Samples fresh per-token Gaussian noise (scale c) for each passage's
/// encoded length.
inline std::vector<Tensor> sample_pdr_noise(const ExtractiveReader& reader,
                                            const ExtractiveExample& example, double noise_scale,
                                            Rng& rng) {
    std::vector<Tensor> noise;
    for (const auto& p : example.passages) {
        const std::size_t len = p.size() + example.question_tokens.size() + 3;
        noise.push_back(Tensor::constant(
            {len, reader.config.hidden_dim},
            rng.normal_vector(len * reader.config.hidden_dim, noise_scale)));
    }
    return noise;
}

/// Full training objective: -L_EXT + gamma * L_PDR with a fresh noise sample
/// per call.
inline ExtractiveLoss loss_total_extractive(const ExtractiveReader& reader, const Vocabulary& vocab,
                                            const ExtractiveExample& example,
                                            const PdrConfig& config, Rng& rng) {
    if (config.noise_scale > 0.0 && config.gamma > 0.0) {
        const std::vector<Tensor> noise =
            sample_pdr_noise(reader, example, config.noise_scale, rng);
        return extractive_loss_with_noise(reader, vocab, example, config, &noise);
    }
    return extractive_loss_with_noise(reader, vocab, example, config, nullptr);
}

// -------------------------------- inference --------------------------------

struct ScoredAnswer {
    std::string text;        // raw surface form (first occurrence)
    double score = 0.0;      // P_a(y)
    std::size_t passage_index = 0;  // first occurrence
    std::size_t begin = 0, end = 0;
};

/// Enumerates spans up to max_span_length over the multi-passage table,
/// aggregates by normalized string, ranks by aggregated probability with
/// ties broken by earlier first occurrence then lexicographic string.
inline std::vector<ScoredAnswer> predict_extractive(const ExtractiveReader& reader,
                                                    const Vocabulary& vocab,
                                                    const std::vector<std::string>& question_tokens,
                                                    const std::vector<std::vector<std::string>>& passages,
                                                    std::size_t max_span_length,
                                                    std::size_t top_n) {
    if (passages.empty()) throw std::invalid_argument("predict_extractive: no passages");
    std::vector<SpanLogits> logits;
    for (std::size_t k = 0; k < passages.size(); ++k) {
        EncodedPair pair = encode_pair(reader, vocab, question_tokens, passages[k], k);
        logits.push_back(span_logits(pair, reader.begin_weight, reader.end_weight));
    }
    bool any_positions = false;
    for (const auto& l : logits) any_positions = any_positions || !l.passage_positions.empty();
    if (!any_positions) return {};
    const ProbTable table = normalize_multi_passage(logits);

    // entry index of (passage, token) pairs, grouped per passage for O(1) lookup
    std::vector<std::vector<std::size_t>> entry_of(passages.size());
    for (std::size_t i = 0; i < table.entries.size(); ++i) {
        auto& row = entry_of[table.entries[i].passage_index];
        if (row.size() <= table.entries[i].passage_token)
            row.resize(table.entries[i].passage_token + 1);
        row[table.entries[i].passage_token] = i;
    }

    std::map<std::string, ScoredAnswer> grouped;
    std::map<std::string, std::tuple<std::size_t, std::size_t, std::size_t>> first_pos;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        const auto& tokens = logits[k].passage_tokens;
        for (std::size_t b = 0; b < tokens.size(); ++b) {
            std::string window;
            for (std::size_t e = b; e < tokens.size() && e - b < max_span_length; ++e) {
                if (e > b) window += ' ';
                window += tokens[e];
                const std::string key = normalize_answer(window);
                if (key.empty()) continue;
                const double p = span_prob(table, entry_of[k][b], entry_of[k][e]);
                auto [it, inserted] = grouped.try_emplace(key);
                if (inserted) {
                    it->second.text = window;
                    it->second.passage_index = k;
                    it->second.begin = b;
                    it->second.end = e;
                    first_pos[key] = {k, b, e};
                }
                it->second.score += p;
            }
        }
    }
    std::vector<ScoredAnswer> ranked;
    ranked.reserve(grouped.size());
    for (auto& [key, ans] : grouped) ranked.push_back(ans);
    std::sort(ranked.begin(), ranked.end(), [](const ScoredAnswer& a, const ScoredAnswer& b) {
        if (a.score != b.score) return a.score > b.score;
        const auto pa = std::tie(a.passage_index, a.begin, a.end);
        const auto pb = std::tie(b.passage_index, b.begin, b.end);
        if (pa != pb) return pa < pb;
        return a.text < b.text;
    });
    if (ranked.size() > top_n) ranked.resize(top_n);
    return ranked;
}

}  // namespace unitedqa
