#pragma once

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "unitedqa/errors.hpp"
#include "unitedqa/extractive.hpp"
#include "unitedqa/seq2seq.hpp"

namespace unitedqa {

struct PathsConfig {
    std::string corpus;
    std::string train;
    std::string dev;
    std::string test;
    std::string index;
    std::string checkpoints;
    std::string outputs;
};

struct RetrievalConfig {
    std::size_t k = 100;
    std::size_t passage_width = 100;
};

struct TrainerConfig {
    std::size_t epochs = 200;
    double learning_rate = 1e-3;
    double warmup_ratio = 0.1;
    std::size_t passages_per_question = 8;
    double gamma = 4.0;
    std::vector<double> gamma_sweep;  // e.g. {4, 8}; empty disables the sweep
    double pdr_noise_scale = 1e-3;
    double eps_adv = 1e-3;
    double alpha = 0.5;
    double beta = 0.5;
    std::size_t max_span_length = 10;
    std::size_t dev_every = 1;     // epochs between dev evaluations
    double early_stop_em = 0.0;    // stop once dev EM reaches this; 0 disables
};

struct EnsembleConfig {
    double tau = 0.6;
    double delta = 0.4;
};

/// Full run configuration. JSON schema and the UNITEDQA_* environment
/// overrides are documented in the README.
struct RunConfig {
    PathsConfig paths;
    RetrievalConfig retrieval;
    EncoderConfig extractive;    // vocab_size filled from the index at run time
    Seq2SeqConfig generative;
    TrainerConfig trainer;
    EnsembleConfig ensemble;
    std::vector<std::size_t> report_k_values{1, 5, 20, 100};
    std::vector<std::uint64_t> seeds{1, 2, 3};

    void validate() const {
        auto fail = [](const std::string& field, const std::string& why) {
            throw InputError("config: " + field + " " + why);
        };
        if (retrieval.k < 1) fail("retrieval.k", "must be >= 1");
        if (retrieval.passage_width < 1) fail("retrieval.passage_width", "must be >= 1");
        if (extractive.num_layers < 1) fail("extractive.num_layers", "must be >= 1");
        if (extractive.hidden_dim < 1) fail("extractive.hidden_dim", "must be >= 1");
        if (extractive.num_heads < 1) fail("extractive.num_heads", "must be >= 1");
        if (extractive.hidden_dim % extractive.num_heads != 0)
            fail("extractive.hidden_dim", "must be divisible by extractive.num_heads");
        if (extractive.max_sequence_length < 4) fail("extractive.max_sequence_length", "must be >= 4");
        if (extractive.ffn_dim < 1) fail("extractive.ffn_dim", "must be >= 1");
        if (generative.encoder_layers < 1) fail("generative.encoder_layers", "must be >= 1");
        if (generative.decoder_layers < 1) fail("generative.decoder_layers", "must be >= 1");
        if (generative.hidden_dim < 1) fail("generative.hidden_dim", "must be >= 1");
        if (generative.num_heads < 1) fail("generative.num_heads", "must be >= 1");
        if (generative.hidden_dim % generative.num_heads != 0)
            fail("generative.hidden_dim", "must be divisible by generative.num_heads");
        if (generative.max_passages < 1) fail("generative.max_passages", "must be >= 1");
        if (generative.max_source_length < 4) fail("generative.max_source_length", "must be >= 4");
        if (generative.max_decode_length < 1) fail("generative.max_decode_length", "must be >= 1");
        if (generative.ffn_dim < 1) fail("generative.ffn_dim", "must be >= 1");
        if (trainer.epochs < 1) fail("trainer.epochs", "must be >= 1");
        if (trainer.learning_rate < 0.0) fail("trainer.learning_rate", "must be >= 0");
        if (trainer.warmup_ratio < 0.0 || trainer.warmup_ratio > 1.0)
            fail("trainer.warmup_ratio", "must be in [0,1]");
        if (trainer.passages_per_question < 1) fail("trainer.passages_per_question", "must be >= 1");
        if (trainer.gamma < 0.0) fail("trainer.gamma", "must be >= 0");
        for (double g : trainer.gamma_sweep)
            if (g < 0.0) fail("trainer.gamma_sweep", "entries must be >= 0");
        if (trainer.pdr_noise_scale < 0.0) fail("trainer.pdr_noise_scale", "must be >= 0");
        if (trainer.eps_adv < 0.0) fail("trainer.eps_adv", "must be >= 0");
        if (trainer.alpha < 0.0) fail("trainer.alpha", "must be >= 0");
        if (trainer.beta < 0.0) fail("trainer.beta", "must be >= 0");
        if (trainer.max_span_length < 1) fail("trainer.max_span_length", "must be >= 1");
        if (trainer.dev_every < 1) fail("trainer.dev_every", "must be >= 1");
        if (trainer.early_stop_em < 0.0 || trainer.early_stop_em > 1.0)
            fail("trainer.early_stop_em", "must be in [0,1]");
        if (ensemble.tau < 0.0) fail("ensemble.tau", "must be >= 0");
        if (ensemble.delta < 0.0) fail("ensemble.delta", "must be >= 0");
        if (ensemble.tau + ensemble.delta <= 0.0)
            fail("ensemble.tau", "and ensemble.delta must not both be zero");
        if (report_k_values.empty()) fail("report_k_values", "must be non-empty");
        for (auto k : report_k_values)
            if (k < 1) fail("report_k_values", "entries must be >= 1");
        if (seeds.empty()) fail("seeds", "must be non-empty");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["paths"] = {{"corpus", paths.corpus},   {"train", paths.train},
                      {"dev", paths.dev},         {"test", paths.test},
                      {"index", paths.index},     {"checkpoints", paths.checkpoints},
                      {"outputs", paths.outputs}};
        j["retrieval"] = {{"k", retrieval.k}, {"passage_width", retrieval.passage_width}};
        j["extractive"] = {{"num_layers", extractive.num_layers},
                           {"hidden_dim", extractive.hidden_dim},
                           {"num_heads", extractive.num_heads},
                           {"max_sequence_length", extractive.max_sequence_length},
                           {"ffn_dim", extractive.ffn_dim}};
        j["generative"] = {{"encoder_layers", generative.encoder_layers},
                           {"decoder_layers", generative.decoder_layers},
                           {"hidden_dim", generative.hidden_dim},
                           {"num_heads", generative.num_heads},
                           {"max_passages", generative.max_passages},
                           {"max_source_length", generative.max_source_length},
                           {"max_decode_length", generative.max_decode_length},
                           {"ffn_dim", generative.ffn_dim},
                           {"attention_bias", generative.use_attention_bias},
                           {"tie_output", generative.tie_output}};
        j["trainer"] = {{"epochs", trainer.epochs},
                        {"learning_rate", trainer.learning_rate},
                        {"warmup_ratio", trainer.warmup_ratio},
                        {"passages_per_question", trainer.passages_per_question},
                        {"gamma", trainer.gamma},
                        {"gamma_sweep", trainer.gamma_sweep},
                        {"pdr_noise_scale", trainer.pdr_noise_scale},
                        {"eps_adv", trainer.eps_adv},
                        {"alpha", trainer.alpha},
                        {"beta", trainer.beta},
                        {"max_span_length", trainer.max_span_length},
                        {"dev_every", trainer.dev_every},
                        {"early_stop_em", trainer.early_stop_em}};
        j["ensemble"] = {{"tau", ensemble.tau}, {"delta", ensemble.delta}};
        j["report_k_values"] = report_k_values;
        j["seeds"] = seeds;
        return j;
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig c;
        try {
            if (j.contains("paths")) {
                const auto& p = j.at("paths");
                c.paths.corpus = p.value("corpus", "");
                c.paths.train = p.value("train", "");
                c.paths.dev = p.value("dev", "");
                c.paths.test = p.value("test", "");
                c.paths.index = p.value("index", "");
                c.paths.checkpoints = p.value("checkpoints", "");
                c.paths.outputs = p.value("outputs", "");
            }
            if (j.contains("retrieval")) {
                const auto& r = j.at("retrieval");
                c.retrieval.k = r.value("k", c.retrieval.k);
                c.retrieval.passage_width = r.value("passage_width", c.retrieval.passage_width);
            }
            if (j.contains("extractive")) {
                const auto& e = j.at("extractive");
                c.extractive.num_layers = e.value("num_layers", c.extractive.num_layers);
                c.extractive.hidden_dim = e.value("hidden_dim", c.extractive.hidden_dim);
                c.extractive.num_heads = e.value("num_heads", c.extractive.num_heads);
                c.extractive.max_sequence_length =
                    e.value("max_sequence_length", c.extractive.max_sequence_length);
                c.extractive.ffn_dim = e.value("ffn_dim", c.extractive.ffn_dim);
            }
            if (j.contains("generative")) {
                const auto& g = j.at("generative");
                c.generative.encoder_layers = g.value("encoder_layers", c.generative.encoder_layers);
                c.generative.decoder_layers = g.value("decoder_layers", c.generative.decoder_layers);
                c.generative.hidden_dim = g.value("hidden_dim", c.generative.hidden_dim);
                c.generative.num_heads = g.value("num_heads", c.generative.num_heads);
                c.generative.max_passages = g.value("max_passages", c.generative.max_passages);
                c.generative.max_source_length =
                    g.value("max_source_length", c.generative.max_source_length);
                c.generative.max_decode_length =
                    g.value("max_decode_length", c.generative.max_decode_length);
                c.generative.ffn_dim = g.value("ffn_dim", c.generative.ffn_dim);
                c.generative.use_attention_bias =
                    g.value("attention_bias", c.generative.use_attention_bias);
                c.generative.tie_output = g.value("tie_output", c.generative.tie_output);
            }
            if (j.contains("trainer")) {
                const auto& t = j.at("trainer");
                c.trainer.epochs = t.value("epochs", c.trainer.epochs);
                c.trainer.learning_rate = t.value("learning_rate", c.trainer.learning_rate);
                c.trainer.warmup_ratio = t.value("warmup_ratio", c.trainer.warmup_ratio);
                c.trainer.passages_per_question =
                    t.value("passages_per_question", c.trainer.passages_per_question);
                c.trainer.gamma = t.value("gamma", c.trainer.gamma);
                c.trainer.gamma_sweep =
                    t.value("gamma_sweep", c.trainer.gamma_sweep);
                c.trainer.pdr_noise_scale = t.value("pdr_noise_scale", c.trainer.pdr_noise_scale);
                c.trainer.eps_adv = t.value("eps_adv", c.trainer.eps_adv);
                c.trainer.alpha = t.value("alpha", c.trainer.alpha);
                c.trainer.beta = t.value("beta", c.trainer.beta);
                c.trainer.max_span_length = t.value("max_span_length", c.trainer.max_span_length);
                c.trainer.dev_every = t.value("dev_every", c.trainer.dev_every);
                c.trainer.early_stop_em = t.value("early_stop_em", c.trainer.early_stop_em);
            }
            if (j.contains("ensemble")) {
                const auto& e = j.at("ensemble");
                c.ensemble.tau = e.value("tau", c.ensemble.tau);
                c.ensemble.delta = e.value("delta", c.ensemble.delta);
            }
            c.report_k_values = j.value("report_k_values", c.report_k_values);
            c.seeds = j.value("seeds", c.seeds);
        } catch (const nlohmann::json::exception& e) {
            throw InputError(std::string("config: ") + e.what());
        }
        return c;
    }

    /// Loads a config file, applies UNITEDQA_<SECTION>_<FIELD> environment
    /// overrides, and validates.
    static RunConfig load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw InputError("config: cannot open: " + path);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(f);
        } catch (const nlohmann::json::exception& e) {
            throw InputError("config: " + path + ": " + e.what());
        }
        apply_env_overrides(j);
        RunConfig c = from_json(j);
        c.validate();
        return c;
    }

    /// Overrides like UNITEDQA_TRAINER_EPOCHS=50 or UNITEDQA_PATHS_INDEX=...
    /// target j[section][field]; UNITEDQA_SEEDS takes a comma list.
    static void apply_env_overrides(nlohmann::json& j) {
        static const std::vector<std::pair<std::string, std::string>> kStringFields = {
            {"paths", "corpus"}, {"paths", "train"},       {"paths", "dev"},    {"paths", "test"},
            {"paths", "index"},  {"paths", "checkpoints"}, {"paths", "outputs"}};
        static const std::vector<std::pair<std::string, std::string>> kNumberFields = {
            {"retrieval", "k"},
            {"retrieval", "passage_width"},
            {"extractive", "num_layers"},
            {"extractive", "hidden_dim"},
            {"extractive", "num_heads"},
            {"extractive", "max_sequence_length"},
            {"extractive", "ffn_dim"},
            {"generative", "encoder_layers"},
            {"generative", "decoder_layers"},
            {"generative", "hidden_dim"},
            {"generative", "num_heads"},
            {"generative", "max_passages"},
            {"generative", "max_source_length"},
            {"generative", "max_decode_length"},
            {"generative", "ffn_dim"},
            {"trainer", "epochs"},
            {"trainer", "learning_rate"},
            {"trainer", "warmup_ratio"},
            {"trainer", "passages_per_question"},
            {"trainer", "gamma"},
            {"trainer", "pdr_noise_scale"},
            {"trainer", "eps_adv"},
            {"trainer", "alpha"},
            {"trainer", "beta"},
            {"trainer", "max_span_length"},
            {"trainer", "dev_every"},
            {"trainer", "early_stop_em"},
            {"ensemble", "tau"},
            {"ensemble", "delta"}};
        auto upper = [](std::string s) {
            for (auto& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
            return s;
        };
        for (const auto& [section, field] : kStringFields) {
            const std::string var = "UNITEDQA_" + upper(section) + "_" + upper(field);
            if (const char* v = std::getenv(var.c_str())) j[section][field] = std::string(v);
        }
        for (const auto& [section, field] : kNumberFields) {
            const std::string var = "UNITEDQA_" + upper(section) + "_" + upper(field);
            if (const char* v = std::getenv(var.c_str())) {
                try {
                    j[section][field] = std::stod(v);
                } catch (const std::exception&) {
                    throw InputError("config: environment override " + var +
                                     " is not numeric: " + v);
                }
            }
        }
        if (const char* v = std::getenv("UNITEDQA_SEEDS")) {
            std::vector<std::uint64_t> seeds;
            std::string s(v), item;
            std::stringstream ss(s);
            while (std::getline(ss, item, ',')) {
                if (item.empty()) continue;
                try {
                    seeds.push_back(std::stoull(item));
                } catch (const std::exception&) {
                    throw InputError("config: UNITEDQA_SEEDS entry not numeric: " + item);
                }
            }
            if (!seeds.empty()) j["seeds"] = seeds;
        }
    }
};

}  // namespace unitedqa
