#pragma once

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "unitedqa/errors.hpp"
#include "unitedqa/eval.hpp"

namespace unitedqa {

enum class ModelType { Extractive, Generative };

inline std::string to_string(ModelType t) {
    return t == ModelType::Extractive ? "extractive" : "generative";
}

inline ModelType model_type_from_string(const std::string& s) {
    if (s == "extractive") return ModelType::Extractive;
    if (s == "generative") return ModelType::Generative;
    throw InputError("predictions: unknown model_type '" + s + "'");
}

struct ReaderPrediction {
    std::string question_id;
    std::string answer;  // raw form; may be empty for generative readers
    std::string model_id;
    ModelType model_type = ModelType::Extractive;
    double score = 0.0;
};

/// Interpolation weights of the hybrid prediction rule.
struct HybridWeights {
    double tau = 0.6;    // extractive
    double delta = 0.4;  // generative
};

/// Weighted vote over the predicted strings: each extractive prediction adds
/// tau and each generative one adds delta to its (normalized) answer. The
/// argmax candidate's raw form is returned. Ties prefer a candidate first
/// proposed by an extractive model, then the lower model index.
inline std::string hybrid_select(const std::vector<ReaderPrediction>& ext_preds,
                                 const std::vector<ReaderPrediction>& gen_preds,
                                 const HybridWeights& w = {}) {
    if (ext_preds.empty() && gen_preds.empty())
        throw std::invalid_argument("hybrid_select: no predictions");
    if (w.tau < 0.0 || w.delta < 0.0 || w.tau + w.delta <= 0.0)
        throw std::invalid_argument("hybrid_select: weights must be non-negative, not both zero");

    struct Candidate {
        double score = 0.0;
        std::size_t first_source = 0;  // order key: extractive block before generative block
        std::string raw;
    };
    std::map<std::string, Candidate> candidates;  // keyed by normalized form
    std::size_t source_index = 0;
    auto absorb = [&](const std::vector<ReaderPrediction>& preds, double weight) {
        for (const auto& p : preds) {
            const std::string key = normalize_answer(p.answer);
            auto [it, inserted] = candidates.try_emplace(key);
            if (inserted) {
                it->second.first_source = source_index;
                it->second.raw = p.answer;
            }
            it->second.score += weight;
            ++source_index;
        }
    };
    absorb(ext_preds, w.tau);
    absorb(gen_preds, w.delta);

    const Candidate* best = nullptr;
    for (const auto& [key, c] : candidates) {
        if (!best || c.score > best->score ||
            (c.score == best->score && c.first_source < best->first_source))
            best = &c;
    }
    bool all_empty = true;
    for (const auto& [key, c] : candidates) all_empty = all_empty && key.empty();
    if (all_empty)
        std::cerr << "hybrid_select: every prediction normalizes to the empty string\n";
    return best->raw;
}

/// Three-way majority on normalized strings; the winner's raw form from the
/// lowest model index is returned. All-distinct falls back to the first model.
inline std::string majority_vote(const std::vector<ReaderPrediction>& preds) {
    if (preds.size() != 3) throw std::invalid_argument("majority_vote: exactly 3 predictions required");
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = i + 1; j < 3; ++j)
            if (normalize_answer(preds[i].answer) == normalize_answer(preds[j].answer))
                return preds[i].answer;
    return preds[0].answer;
}

/// Fraction of questions on which two prediction maps agree after
/// normalization. Both maps must cover the same question ids.
inline double agreement_ratio(const std::vector<ReaderPrediction>& preds_a,
                              const std::vector<ReaderPrediction>& preds_b) {
    std::map<std::string, std::string> a, b;
    for (const auto& p : preds_a) a[p.question_id] = p.answer;
    for (const auto& p : preds_b) b[p.question_id] = p.answer;
    if (a.size() != b.size()) throw std::invalid_argument("agreement_ratio: question sets differ");
    if (a.empty()) throw std::invalid_argument("agreement_ratio: empty prediction sets");
    double agree = 0.0;
    for (const auto& [qid, ans] : a) {
        auto it = b.find(qid);
        if (it == b.end()) throw std::invalid_argument("agreement_ratio: question sets differ at " + qid);
        if (normalize_answer(ans) == normalize_answer(it->second)) agree += 1.0;
    }
    return agree / static_cast<double>(a.size());
}

// --------------------------- prediction file I/O ---------------------------

/// JSON-lines: {"question_id", "answer", "model_id",
/// "model_type": "extractive"|"generative", "score"}.
inline std::vector<ReaderPrediction> read_predictions_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("predictions: cannot open: " + path);
    std::vector<ReaderPrediction> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            ReaderPrediction p;
            p.question_id = j.at("question_id").get<std::string>();
            p.answer = j.at("answer").get<std::string>();
            p.model_id = j.at("model_id").get<std::string>();
            p.model_type = model_type_from_string(j.at("model_type").get<std::string>());
            p.score = j.at("score").get<double>();
            out.push_back(std::move(p));
        } catch (const nlohmann::json::exception& e) {
            throw InputError("predictions: line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

inline void write_predictions_jsonl(const std::string& path,
                                    const std::vector<ReaderPrediction>& preds) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw InputError("predictions: cannot open for writing: " + path);
    for (const auto& p : preds) {
        nlohmann::json j{{"question_id", p.question_id},
                         {"answer", p.answer},
                         {"model_id", p.model_id},
                         {"model_type", to_string(p.model_type)},
                         {"score", p.score}};
        f << j.dump() << '\n';
    }
}

}  // namespace unitedqa
