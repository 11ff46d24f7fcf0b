#pragma once

#include <set>
#include <string>
#include <vector>

#include "unitedqa/errors.hpp"
#include "unitedqa/eval.hpp"
#include "unitedqa/retrieval.hpp"
#include "unitedqa/rng.hpp"

namespace unitedqa {

struct SynthParams {
    std::size_t num_docs = 200;
    std::size_t num_train = 100;
    std::size_t num_test = 50;
    std::uint64_t seed = 1;

    void validate() const {
        if (num_docs < 1 || num_train < 1 || num_test < 1)
            throw std::invalid_argument("synth: sizes must be >= 1");
    }
};

struct SynthFixture {
    std::vector<Document> corpus;
    std::vector<QAExample> train;
    std::vector<QAExample> dev;  // copy of train: desk-scale runs fit in memory
    std::vector<QAExample> test;
};

namespace detail {

struct SynthRelation {
    const char* name;
    const char* question;      // primary phrasing, contains <e>
    const char* alt_question;  // second phrasing for answer-overlap-only items
    const char* sentence;      // contains <e> and <a>
    bool numeric_answer;
};

inline const std::vector<SynthRelation>& synth_relations() {
    static const std::vector<SynthRelation> kRelations = {
        {"capital", "what is the capital of <e>", "name the capital of <e>",
         "the capital of <e> is <a>", false},
        {"leader", "who is the leader of <e>", "name the leader of <e>",
         "the leader of <e> is <a>", false},
        {"location", "where is <e> located", "name the region where <e> lies",
         "<e> is located in the region of <a>", false},
        {"founded", "when was <e> founded", "name the year <e> was founded",
         "<e> was founded in the year <a>", true},
        {"rival", "which realm is the rival of <e>", "name the rival realm of <e>",
         "the rival realm of <e> is <a>", false},
        {"population", "how many citizens live in <e>", "name the citizen count of <e>",
         "<e> has a population of <a> citizens", true},
    };
    return kRelations;
}

inline std::string replace_all(std::string s, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

inline std::string synth_name(Rng& rng, std::set<std::string>& used) {
    static const char* kConsonants = "bdfgklmnprstvz";
    static const char* kVowels = "aeiou";
    for (;;) {
        std::string name;
        const std::size_t syllables = 3 + rng.index(2);
        for (std::size_t s = 0; s < syllables; ++s) {
            name.push_back(kConsonants[rng.index(14)]);
            name.push_back(kVowels[rng.index(5)]);
        }
        if (used.insert(name).second) return name;
    }
}

inline std::string synth_number(Rng& rng, std::set<std::string>& used) {
    for (;;) {
        std::string num = std::to_string(1000 + rng.index(999000));
        if (used.insert(num).second) return num;
    }
}

}  // namespace detail

/// Generates an entity-relation world: one document per entity stating one
/// fact per relation. Every answer token is globally unique, so each gold
/// answer appears verbatim in exactly one document. Test items are built
/// with overlap annotations by construction: repeated train questions
/// (question and answer overlap), re-phrasings of trained facts (answer
/// overlap only), and questions about facts never asked in training
/// (no overlap).
inline SynthFixture synth_fixture(const SynthParams& params) {
    params.validate();
    Rng rng(params.seed);
    const auto& relations = detail::synth_relations();
    std::set<std::string> used_tokens;

    struct Fact {
        std::size_t entity;
        std::size_t relation;
        std::string answer;
    };
    std::vector<std::string> entities;
    std::vector<std::vector<Fact>> facts(params.num_docs);

    SynthFixture out;
    for (std::size_t d = 0; d < params.num_docs; ++d) {
        entities.push_back(detail::synth_name(rng, used_tokens));
        std::string text;
        for (std::size_t r = 0; r < relations.size(); ++r) {
            const std::string answer = relations[r].numeric_answer
                                           ? detail::synth_number(rng, used_tokens)
                                           : detail::synth_name(rng, used_tokens);
            facts[d].push_back({d, r, answer});
            std::string sentence = detail::replace_all(relations[r].sentence, "<e>", entities[d]);
            sentence = detail::replace_all(sentence, "<a>", answer);
            if (!text.empty()) text += ". ";
            text += sentence;
        }
        text += ".";
        out.corpus.push_back({"doc" + std::to_string(d), entities[d], text});
    }

    auto make_example = [&](const std::string& id, std::size_t entity, std::size_t relation,
                            bool alt_phrasing) {
        const auto& rel = relations[relation];
        QAExample ex;
        ex.question_id = id;
        ex.question = detail::replace_all(alt_phrasing ? rel.alt_question : rel.question, "<e>",
                                          entities[entity]);
        ex.answers = {facts[entity][relation].answer};
        return ex;
    };

    // training questions cycle entities and relations deterministically
    std::vector<std::pair<std::size_t, std::size_t>> train_facts;
    for (std::size_t i = 0; i < params.num_train; ++i) {
        const std::size_t entity = i % params.num_docs;
        const std::size_t relation = (i / params.num_docs + i) % relations.size();
        train_facts.emplace_back(entity, relation);
        out.train.push_back(make_example("train-" + std::to_string(i), entity, relation, false));
    }
    out.dev = out.train;

    // test: ~40% repeated train questions, ~30% re-phrasings, ~30% fresh facts
    const std::size_t n_qo = params.num_test * 2 / 5;
    const std::size_t n_ao = params.num_test * 3 / 10;
    for (std::size_t i = 0; i < params.num_test; ++i) {
        QAExample ex;
        OverlapFlags flags;
        if (i < n_qo) {
            const auto [entity, relation] = train_facts[i % train_facts.size()];
            ex = make_example("test-" + std::to_string(i), entity, relation, false);
            flags = {true, true};
        } else if (i < n_qo + n_ao) {
            const auto [entity, relation] = train_facts[(i * 7 + 3) % train_facts.size()];
            ex = make_example("test-" + std::to_string(i), entity, relation, true);
            flags = {false, true};
        } else {
            // a fact outside the train coverage: offset the relation index
            const std::size_t entity = i % params.num_docs;
            std::size_t relation = (i + 3) % relations.size();
            bool trained = true;
            for (std::size_t tries = 0; tries < relations.size() && trained; ++tries) {
                trained = false;
                for (const auto& [te, tr] : train_facts)
                    trained = trained || (te == entity && tr == relation);
                if (trained) relation = (relation + 1) % relations.size();
            }
            // when every relation of this entity is trained (tiny fixtures),
            // fall back to a re-phrasing so the annotation stays truthful
            ex = make_example("test-" + std::to_string(i), entity, relation, trained);
            flags = {false, trained};
        }
        ex.overlap = flags;
        out.test.push_back(std::move(ex));
    }
    return out;
}

inline void write_corpus_jsonl(const std::string& path, const std::vector<Document>& docs) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw InputError("corpus: cannot open for writing: " + path);
    for (const auto& d : docs) {
        nlohmann::json j{{"id", d.id}, {"title", d.title}, {"text", d.text}};
        f << j.dump() << '\n';
    }
}

}  // namespace unitedqa
