#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "unitedqa/errors.hpp"
#include "unitedqa/retrieval.hpp"
#include "unitedqa/tokenizer.hpp"

namespace unitedqa {

struct OverlapFlags {
    bool question_overlap = false;
    bool answer_overlap = false;
};

struct QAExample {
    std::string question_id;
    std::string question;
    std::vector<std::string> answers;  // at least one
    std::optional<OverlapFlags> overlap;
};

/// Lowercase, strip punctuation, drop the articles a/an/the as whole words,
/// collapse whitespace. Idempotent.
inline std::string normalize_answer(const std::string& s) {
    std::string lowered;
    lowered.reserve(s.size());
    for (unsigned char ch : s) {
        if (std::ispunct(ch)) continue;
        lowered.push_back(static_cast<char>(std::tolower(ch)));
    }
    std::string out;
    std::string word;
    auto flush = [&out, &word] {
        if (word.empty()) return;
        if (word != "a" && word != "an" && word != "the") {
            if (!out.empty()) out.push_back(' ');
            out += word;
        }
        word.clear();
    };
    for (unsigned char ch : lowered) {
        if (std::isspace(ch))
            flush();
        else
            word.push_back(static_cast<char>(ch));
    }
    flush();
    return out;
}

/// 1 iff the normalized prediction equals any normalized gold answer.
inline int exact_match(const std::string& prediction, const std::vector<std::string>& golds) {
    if (golds.empty()) throw std::invalid_argument("exact_match: golds must be non-empty");
    const std::string p = normalize_answer(prediction);
    for (const auto& g : golds)
        if (normalize_answer(g) == p) return 1;
    return 0;
}

/// Mean exact match over a dataset; every question needs exactly one
/// prediction, keyed by question_id.
inline double em_score(const std::unordered_map<std::string, std::string>& predictions,
                       const std::vector<QAExample>& dataset) {
    if (dataset.empty()) throw std::invalid_argument("em_score: empty dataset");
    std::vector<std::string> missing;
    double hits = 0.0;
    for (const auto& ex : dataset) {
        auto it = predictions.find(ex.question_id);
        if (it == predictions.end()) {
            missing.push_back(ex.question_id);
            continue;
        }
        hits += exact_match(it->second, ex.answers);
    }
    if (!missing.empty()) {
        std::string msg = "em_score: missing predictions for:";
        for (const auto& id : missing) msg += " " + id;
        throw std::invalid_argument(msg);
    }
    return hits / static_cast<double>(dataset.size());
}

/// True when the normalized gold appears as a contiguous subsequence of the
/// passage's normalized token stream.
inline bool passage_contains_answer(const std::vector<std::string>& passage_tokens,
                                    const std::string& gold) {
    std::string joined;
    for (const auto& t : passage_tokens) {
        if (!joined.empty()) joined.push_back(' ');
        joined += t;
    }
    const std::vector<std::string> hay = tokenize(normalize_answer(joined));
    const std::vector<std::string> needle = tokenize(normalize_answer(gold));
    if (needle.empty() || needle.size() > hay.size()) return false;
    for (std::size_t start = 0; start + needle.size() <= hay.size(); ++start) {
        bool all = true;
        for (std::size_t i = 0; i < needle.size() && all; ++i) all = hay[start + i] == needle[i];
        if (all) return true;
    }
    return false;
}

/// Fraction of questions whose top-k retrieved passages include at least one
/// answer-bearing passage, for each requested k. Non-decreasing in k.
inline std::map<std::size_t, double> topk_retrieval_accuracy(
    const std::vector<RetrievalResult>& retrievals, const PassageIndex& index,
    const std::vector<QAExample>& dataset, const std::vector<std::size_t>& k_values) {
    if (dataset.empty()) throw std::invalid_argument("topk_retrieval_accuracy: empty dataset");
    if (retrievals.size() != dataset.size())
        throw std::invalid_argument("topk_retrieval_accuracy: one retrieval per question required");
    const std::size_t max_k = *std::max_element(k_values.begin(), k_values.end());
    std::map<std::size_t, double> hits;
    for (auto k : k_values) hits[k] = 0.0;
    for (std::size_t qi = 0; qi < dataset.size(); ++qi) {
        const auto& r = retrievals[qi];
        if (r.ranked.size() < max_k)
            throw std::invalid_argument("topk_retrieval_accuracy: retrieval depth " +
                                        std::to_string(r.ranked.size()) + " below max k " +
                                        std::to_string(max_k));
        // first rank position (1-based) holding a gold answer
        std::size_t first_hit = 0;
        for (std::size_t pos = 0; pos < r.ranked.size() && first_hit == 0; ++pos) {
            const auto& tokens = index.passage(r.ranked[pos].ordinal).tokens;
            for (const auto& gold : dataset[qi].answers)
                if (passage_contains_answer(tokens, gold)) {
                    first_hit = pos + 1;
                    break;
                }
        }
        if (first_hit == 0) continue;
        for (auto k : k_values)
            if (first_hit <= k) hits[k] += 1.0;
    }
    for (auto& [k, v] : hits) v /= static_cast<double>(dataset.size());
    return hits;
}

struct CategoryEm {
    std::size_t count = 0;
    double em = 0.0;
};

struct BreakdownReport {
    CategoryEm total;
    CategoryEm question_overlap;
    CategoryEm no_question_overlap;
    CategoryEm answer_overlap;
    CategoryEm answer_overlap_only;
    CategoryEm no_overlap;
};

/// Exact match split over the overlap categories. Every example must carry
/// annotations.
inline BreakdownReport breakdown_eval(const std::unordered_map<std::string, std::string>& predictions,
                                      const std::vector<QAExample>& dataset) {
    for (const auto& ex : dataset)
        if (!ex.overlap)
            throw std::invalid_argument("breakdown_eval: missing overlap annotations for " +
                                        ex.question_id);
    BreakdownReport rep;
    auto add = [](CategoryEm& c, int em) {
        c.count += 1;
        c.em += em;
    };
    for (const auto& ex : dataset) {
        auto it = predictions.find(ex.question_id);
        if (it == predictions.end())
            throw std::invalid_argument("breakdown_eval: missing prediction for " + ex.question_id);
        const int em = exact_match(it->second, ex.answers);
        const bool qo = ex.overlap->question_overlap;
        const bool ao = ex.overlap->answer_overlap;
        add(rep.total, em);
        if (qo) add(rep.question_overlap, em);
        if (!qo) add(rep.no_question_overlap, em);
        if (ao) add(rep.answer_overlap, em);
        if (ao && !qo) add(rep.answer_overlap_only, em);
        if (!ao && !qo) add(rep.no_overlap, em);
    }
    auto finish = [](CategoryEm& c) {
        if (c.count > 0) c.em /= static_cast<double>(c.count);
    };
    finish(rep.total);
    finish(rep.question_overlap);
    finish(rep.no_question_overlap);
    finish(rep.answer_overlap);
    finish(rep.answer_overlap_only);
    finish(rep.no_overlap);
    return rep;
}

struct WhCategoryStat {
    std::size_t count = 0;
    double em = 0.0;
    std::optional<double> relative;  // (category EM - overall EM) / overall EM
};

inline std::string wh_category(const std::string& question) {
    const auto tokens = tokenize(question);
    static const std::set<std::string> kWh{"what", "which", "when", "who", "how", "where"};
    if (!tokens.empty() && kWh.count(tokens.front())) return tokens.front();
    return "other";
}

/// Per-WH-word accuracy relative to the overall accuracy. When overall EM is
/// zero the relative change is undefined and left unset.
inline std::map<std::string, WhCategoryStat> wh_relative_accuracy(
    const std::unordered_map<std::string, std::string>& predictions,
    const std::vector<QAExample>& dataset) {
    std::map<std::string, WhCategoryStat> stats;
    double overall = 0.0;
    for (const auto& ex : dataset) {
        auto it = predictions.find(ex.question_id);
        if (it == predictions.end())
            throw std::invalid_argument("wh_relative_accuracy: missing prediction for " +
                                        ex.question_id);
        const int em = exact_match(it->second, ex.answers);
        overall += em;
        auto& s = stats[wh_category(ex.question)];
        s.count += 1;
        s.em += em;
    }
    if (dataset.empty()) return stats;
    overall /= static_cast<double>(dataset.size());
    for (auto& [cat, s] : stats) {
        s.em /= static_cast<double>(s.count);
        if (overall > 0.0) s.relative = (s.em - overall) / overall;
    }
    return stats;
}

// ----------------------------- dataset I/O ---------------------------------

/// JSON-lines dataset: {"question_id", "question", "answers": [string],
/// "question_overlap"?: bool, "answer_overlap"?: bool}. When one overlap flag
/// is present the other must be too.
inline std::vector<QAExample> read_dataset_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("dataset: cannot open: " + path);
    std::vector<QAExample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw InputError("dataset: line " + std::to_string(line_no) + ": " + e.what());
        }
        QAExample ex;
        try {
            ex.question_id = j.at("question_id").get<std::string>();
            ex.question = j.at("question").get<std::string>();
            ex.answers = j.at("answers").get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw InputError("dataset: line " + std::to_string(line_no) + ": " + e.what());
        }
        if (ex.answers.empty())
            throw InputError("dataset: line " + std::to_string(line_no) + ": answers empty");
        const bool has_qo = j.contains("question_overlap");
        const bool has_ao = j.contains("answer_overlap");
        if (has_qo != has_ao)
            throw InputError("dataset: line " + std::to_string(line_no) +
                             ": overlap flags must be set together");
        if (has_qo) {
            OverlapFlags flags;
            flags.question_overlap = j.at("question_overlap").get<bool>();
            flags.answer_overlap = j.at("answer_overlap").get<bool>();
            ex.overlap = flags;
        }
        out.push_back(std::move(ex));
    }
    return out;
}

inline void write_dataset_jsonl(const std::string& path, const std::vector<QAExample>& dataset) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw InputError("dataset: cannot open for writing: " + path);
    for (const auto& ex : dataset) {
        nlohmann::json j{{"question_id", ex.question_id},
                         {"question", ex.question},
                         {"answers", ex.answers}};
        if (ex.overlap) {
            j["question_overlap"] = ex.overlap->question_overlap;
            j["answer_overlap"] = ex.overlap->answer_overlap;
        }
        f << j.dump() << '\n';
    }
}

}  // namespace unitedqa
