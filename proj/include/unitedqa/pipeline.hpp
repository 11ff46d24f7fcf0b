#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "unitedqa/checkpoint.hpp"
#include "unitedqa/config.hpp"
#include "unitedqa/ensemble.hpp"
#include "unitedqa/errors.hpp"
#include "unitedqa/eval.hpp"
#include "unitedqa/extractive.hpp"
#include "unitedqa/optim.hpp"
#include "unitedqa/retrieval.hpp"
#include "unitedqa/seq2seq.hpp"
#include "unitedqa/synth.hpp"

namespace unitedqa {

// ------------------------------ file helpers -------------------------------

/// Write-temp-then-rename so readers never observe a partial file.
inline void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw InputError("cannot open for writing: " + tmp);
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!f) throw InputError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

/// FNV-1a 64-bit content hash, hex encoded.
inline std::string content_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot hash missing file: " + path);
    std::uint64_t h = 1469598103934665603ULL;
    char buf[4096];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
        for (std::streamsize i = 0; i < f.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
        if (!f) break;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

inline Vocabulary vocabulary_from_index(const PassageIndex& index) {
    return Vocabulary::from_terms(index.terms());
}

// ------------------------------ training data ------------------------------

struct RetrievedQuestion {
    const QAExample* example;
    std::vector<std::size_t> question_token_ids;  // unused by readers, kept for logs
    std::vector<std::string> question_tokens;
    std::vector<std::vector<std::string>> passages;  // top-P token lists, rank order
};

inline std::vector<RetrievedQuestion> retrieve_for_dataset(const Retriever& retriever,
                                                           const PassageIndex& index,
                                                           const std::vector<QAExample>& dataset,
                                                           std::size_t passages_per_question) {
    std::vector<RetrievedQuestion> out;
    out.reserve(dataset.size());
    for (const auto& ex : dataset) {
        RetrievedQuestion rq;
        rq.example = &ex;
        rq.question_tokens = tokenize(ex.question);
        RetrievalResult r = retriever.retrieve_top_k(rq.question_tokens, passages_per_question);
        for (const auto& rp : r.ranked) rq.passages.push_back(index.passage(rp.ordinal).tokens);
        out.push_back(std::move(rq));
    }
    return out;
}

inline std::vector<RetrievedQuestion> retrieve_for_dataset(const PassageIndex& index,
                                                           const std::vector<QAExample>& dataset,
                                                           std::size_t passages_per_question) {
    return retrieve_for_dataset(Bm25Retriever(index), index, dataset, passages_per_question);
}

// ------------------------------ run manifest -------------------------------

struct TrainMetrics {
    double best_dev_em = 0.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
    std::size_t skipped_questions = 0;
    std::vector<double> epoch_losses;
    std::vector<std::pair<std::size_t, double>> dev_ems;
    double gamma_used = 0.0;
};

inline nlohmann::json metrics_to_json(const TrainMetrics& m) {
    nlohmann::json dev = nlohmann::json::array();
    for (const auto& [epoch, em] : m.dev_ems) dev.push_back({epoch, em});
    return {{"best_dev_em", m.best_dev_em},
            {"best_epoch", m.best_epoch},
            {"epochs_run", m.epochs_run},
            {"skipped_questions", m.skipped_questions},
            {"epoch_losses", m.epoch_losses},
            {"dev_ems", dev},
            {"gamma", m.gamma_used}};
}

/// Written atomically next to each checkpoint at the end of a training run.
inline void write_run_manifest(const std::string& path, const RunConfig& cfg,
                               const std::string& reader, std::uint64_t seed,
                               const nlohmann::json& metrics_by_seed, double wall_seconds,
                               const nlohmann::json& extra = {}) {
    nlohmann::json j;
    j["config"] = cfg.to_json();
    j["reader"] = reader;
    j["seed"] = seed;
    j["input_hashes"] = nlohmann::json::object();
    for (const auto& [label, p] :
         std::vector<std::pair<std::string, std::string>>{{"index", cfg.paths.index},
                                                          {"train", cfg.paths.train},
                                                          {"dev", cfg.paths.dev}})
        if (!p.empty() && std::filesystem::exists(p)) j["input_hashes"][label] = content_hash(p);
    j["metrics"] = metrics_by_seed;
    j["timings"] = {{"wall_seconds", wall_seconds}};
    if (!extra.is_null() && !extra.empty()) j["selection"] = extra;
    write_file_atomic(path, j.dump(2) + "\n");
}

// ------------------------------- prediction --------------------------------

inline std::vector<ReaderPrediction> predict_extractive_dataset(
    const ExtractiveReader& reader, const Vocabulary& vocab,
    const std::vector<RetrievedQuestion>& questions, std::size_t max_span_length,
    const std::string& model_id, std::ostream& log) {
    std::vector<ReaderPrediction> out;
    for (const auto& rq : questions) {
        ReaderPrediction p;
        p.question_id = rq.example->question_id;
        p.model_id = model_id;
        p.model_type = ModelType::Extractive;
        if (rq.passages.empty()) {
            log << "predict: no passages retrieved for " << p.question_id
                << ", predicting empty string\n";
            p.answer = "";
            p.score = 0.0;
        } else {
            auto ranked =
                predict_extractive(reader, vocab, rq.question_tokens, rq.passages, max_span_length, 1);
            if (ranked.empty()) {
                p.answer = "";
                p.score = 0.0;
            } else {
                p.answer = ranked[0].text;
                p.score = ranked[0].score;
            }
        }
        out.push_back(std::move(p));
    }
    return out;
}

inline std::vector<ReaderPrediction> predict_generative_dataset(
    const Seq2SeqModel& model, const Vocabulary& vocab,
    const std::vector<RetrievedQuestion>& questions, const std::string& model_id,
    std::ostream& log) {
    std::vector<ReaderPrediction> out;
    for (const auto& rq : questions) {
        ReaderPrediction p;
        p.question_id = rq.example->question_id;
        p.model_id = model_id;
        p.model_type = ModelType::Generative;
        if (rq.passages.empty()) {
            log << "predict: no passages retrieved for " << p.question_id
                << ", predicting empty string\n";
            p.answer = "";
            p.score = 0.0;
        } else {
            std::vector<std::vector<std::string>> ps = rq.passages;
            if (ps.size() > model.config.max_passages) ps.resize(model.config.max_passages);
            DecodeResult r = greedy_decode(model, vocab, rq.question_tokens, ps);
            p.answer = r.text;
            p.score = r.score;
        }
        out.push_back(std::move(p));
    }
    return out;
}

// ------------------------------ reader training -----------------------------

struct ExtractiveTrainResult {
    ExtractiveReader reader;
    Vocabulary vocab;
    NamedParams best_params;  // deep copy of the best-dev state
    TrainMetrics metrics;
};

namespace detail {

inline NamedParams deep_copy(const NamedParams& params) {
    NamedParams out;
    out.reserve(params.size());
    for (const auto& [name, t] : params)
        out.emplace_back(name, Tensor::leaf(t.shape(), t.values(), true));
    return out;
}

inline std::vector<std::vector<double>> collect_grads(const std::vector<Tensor>& params) {
    std::vector<std::vector<double>> grads;
    grads.reserve(params.size());
    for (const auto& p : params)
        grads.push_back(p.grad().empty() ? std::vector<double>(p.size(), 0.0) : p.grad());
    return grads;
}

inline double dataset_em(const std::vector<ReaderPrediction>& preds,
                         const std::vector<QAExample>& dataset) {
    std::unordered_map<std::string, std::string> by_id;
    for (const auto& p : preds) by_id[p.question_id] = p.answer;
    return em_score(by_id, dataset);
}

}  // namespace detail

/// Trains the extractive reader on retrieved passages with the multi
/// objective plus PDR, Adam, and the warmup/decay schedule. Questions with
/// no correct span in any retrieved passage are skipped (logged). The best
/// dev-EM parameter snapshot is kept.
inline ExtractiveTrainResult train_extractive(const RunConfig& cfg, const PassageIndex& index,
                                              const std::vector<QAExample>& train_set,
                                              const std::vector<QAExample>& dev_set,
                                              std::uint64_t seed, double gamma, std::ostream& log) {
    ExtractiveTrainResult result;
    result.vocab = vocabulary_from_index(index);
    EncoderConfig enc_cfg = cfg.extractive;
    enc_cfg.vocab_size = result.vocab.size();
    enc_cfg.seed = seed;
    result.reader = ExtractiveReader::create(enc_cfg);
    result.metrics.gamma_used = gamma;

    const auto retrieved = retrieve_for_dataset(index, train_set, cfg.trainer.passages_per_question);
    std::vector<ExtractiveExample> examples;
    for (const auto& rq : retrieved) {
        if (rq.passages.empty()) {
            ++result.metrics.skipped_questions;
            log << "train: no passages for " << rq.example->question_id << ", skipped\n";
            continue;
        }
        ExtractiveExample ex =
            prepare_extractive_example(result.reader, rq.question_tokens, rq.passages,
                                       rq.example->answers, cfg.trainer.max_span_length);
        if (ex.spans.total() == 0) {
            ++result.metrics.skipped_questions;
            log << "train: no correct span for " << rq.example->question_id << ", skipped\n";
            continue;
        }
        examples.push_back(std::move(ex));
    }
    if (examples.empty())
        throw NoTrainableData("train: no question has a correct span in its retrieved passages");

    const auto dev_retrieved =
        retrieve_for_dataset(index, dev_set, cfg.trainer.passages_per_question);

    std::vector<Tensor> params;
    NamedParams named = result.reader.parameters();
    for (auto& [name, t] : named) params.push_back(t);
    OptimizerState opt = OptimizerState::for_params(params, cfg.trainer.learning_rate);

    PdrConfig pdr;
    pdr.gamma = gamma;
    pdr.noise_scale = cfg.trainer.pdr_noise_scale;

    Rng rng = Rng(seed).fork(0xE0);
    const std::size_t total_steps = cfg.trainer.epochs * examples.size();
    std::size_t step = 0;
    double best_em = -1.0;

    for (std::size_t epoch = 1; epoch <= cfg.trainer.epochs; ++epoch) {
        std::vector<std::size_t> order(examples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t idx : order) {
            ExtractiveLoss loss =
                loss_total_extractive(result.reader, result.vocab, examples[idx], pdr, rng);
            backward(loss.total);
            auto grads = detail::collect_grads(params);
            ++step;
            opt.learning_rate =
                lr_schedule(step, total_steps, cfg.trainer.warmup_ratio, cfg.trainer.learning_rate);
            adam_step(params, grads, opt);
            epoch_loss += loss.total.item();
        }
        epoch_loss /= static_cast<double>(examples.size());
        result.metrics.epoch_losses.push_back(epoch_loss);
        result.metrics.epochs_run = epoch;

        if (epoch % cfg.trainer.dev_every == 0 || epoch == cfg.trainer.epochs) {
            auto preds = predict_extractive_dataset(result.reader, result.vocab, dev_retrieved,
                                                    cfg.trainer.max_span_length, "dev", log);
            const double em = detail::dataset_em(preds, dev_set);
            result.metrics.dev_ems.emplace_back(epoch, em);
            log << "epoch " << epoch << ": loss " << epoch_loss << ", dev EM " << em << "\n";
            if (em > best_em) {
                best_em = em;
                result.metrics.best_dev_em = em;
                result.metrics.best_epoch = epoch;
                result.best_params = detail::deep_copy(named);
            }
            if (cfg.trainer.early_stop_em > 0.0 && em >= cfg.trainer.early_stop_em) {
                log << "early stop: dev EM " << em << " reached target "
                    << cfg.trainer.early_stop_em << "\n";
                break;
            }
        } else {
            log << "epoch " << epoch << ": loss " << epoch_loss << "\n";
        }
    }
    if (result.best_params.empty()) result.best_params = detail::deep_copy(named);
    return result;
}

struct GenerativeTrainResult {
    Seq2SeqModel model;
    Vocabulary vocab;
    NamedParams best_params;
    TrainMetrics metrics;
};

/// Trains the generative reader with the mixed clean/adversarial objective.
inline GenerativeTrainResult train_generative(const RunConfig& cfg, const PassageIndex& index,
                                              const std::vector<QAExample>& train_set,
                                              const std::vector<QAExample>& dev_set,
                                              std::uint64_t seed, std::ostream& log) {
    GenerativeTrainResult result;
    result.vocab = vocabulary_from_index(index);
    Seq2SeqConfig gen_cfg = cfg.generative;
    gen_cfg.vocab_size = result.vocab.size();
    gen_cfg.seed = seed;
    if (gen_cfg.max_passages < cfg.trainer.passages_per_question)
        gen_cfg.max_passages = cfg.trainer.passages_per_question;
    result.model = Seq2SeqModel::create(gen_cfg);

    struct GenExample {
        std::vector<std::string> question_tokens;
        std::vector<std::vector<std::string>> passages;
        std::vector<std::size_t> target;
    };
    const auto retrieved = retrieve_for_dataset(index, train_set, cfg.trainer.passages_per_question);
    std::vector<GenExample> examples;
    for (const auto& rq : retrieved) {
        if (rq.passages.empty()) {
            ++result.metrics.skipped_questions;
            log << "train: no passages for " << rq.example->question_id << ", skipped\n";
            continue;
        }
        GenExample ex;
        ex.question_tokens = rq.question_tokens;
        ex.passages = rq.passages;
        if (ex.passages.size() > gen_cfg.max_passages) ex.passages.resize(gen_cfg.max_passages);
        std::vector<std::size_t> answer_ids = result.vocab.encode(tokenize(rq.example->answers[0]));
        if (answer_ids.size() >= gen_cfg.max_decode_length)
            answer_ids.resize(gen_cfg.max_decode_length - 1);
        answer_ids.push_back(Vocabulary::kEos);
        ex.target = std::move(answer_ids);
        examples.push_back(std::move(ex));
    }
    if (examples.empty()) throw NoTrainableData("train: no usable generative examples");

    const auto dev_retrieved =
        retrieve_for_dataset(index, dev_set, cfg.trainer.passages_per_question);

    std::vector<Tensor> params;
    NamedParams named = result.model.parameters();
    for (auto& [name, t] : named) params.push_back(t);
    OptimizerState opt = OptimizerState::for_params(params, cfg.trainer.learning_rate);

    AdvConfig adv;
    adv.epsilon = cfg.trainer.eps_adv;
    adv.alpha = cfg.trainer.alpha;
    adv.beta = cfg.trainer.beta;

    Rng rng = Rng(seed).fork(0xA1);
    const std::size_t total_steps = cfg.trainer.epochs * examples.size();
    std::size_t step = 0;
    double best_em = -1.0;

    for (std::size_t epoch = 1; epoch <= cfg.trainer.epochs; ++epoch) {
        std::vector<std::size_t> order(examples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t idx : order) {
            const auto& ex = examples[idx];
            GenerativeLoss loss = loss_total_generative(result.model, result.vocab,
                                                        ex.question_tokens, ex.passages, ex.target,
                                                        adv);
            backward(loss.total);
            auto grads = detail::collect_grads(params);
            ++step;
            opt.learning_rate =
                lr_schedule(step, total_steps, cfg.trainer.warmup_ratio, cfg.trainer.learning_rate);
            adam_step(params, grads, opt);
            epoch_loss += loss.total.item();
        }
        epoch_loss /= static_cast<double>(examples.size());
        result.metrics.epoch_losses.push_back(epoch_loss);
        result.metrics.epochs_run = epoch;

        if (epoch % cfg.trainer.dev_every == 0 || epoch == cfg.trainer.epochs) {
            auto preds = predict_generative_dataset(result.model, result.vocab, dev_retrieved,
                                                    "dev", log);
            const double em = detail::dataset_em(preds, dev_set);
            result.metrics.dev_ems.emplace_back(epoch, em);
            log << "epoch " << epoch << ": loss " << epoch_loss << ", dev EM " << em << "\n";
            if (em > best_em) {
                best_em = em;
                result.metrics.best_dev_em = em;
                result.metrics.best_epoch = epoch;
                result.best_params = detail::deep_copy(named);
            }
            if (cfg.trainer.early_stop_em > 0.0 && em >= cfg.trainer.early_stop_em) {
                log << "early stop: dev EM " << em << " reached target "
                    << cfg.trainer.early_stop_em << "\n";
                break;
            }
        } else {
            log << "epoch " << epoch << ": loss " << epoch_loss << "\n";
        }
    }
    if (result.best_params.empty()) result.best_params = detail::deep_copy(named);
    return result;
}

}  // namespace unitedqa
