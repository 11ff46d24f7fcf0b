#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "unitedqa/pipeline.hpp"

namespace unitedqa {

namespace detail {

inline double wall_seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::string checkpoint_path(const RunConfig& cfg, const std::string& reader,
                                   std::uint64_t seed, const std::string& suffix = "") {
    return (std::filesystem::path(cfg.paths.checkpoints) /
            (reader + "-seed" + std::to_string(seed) + suffix + ".ckpt"))
        .string();
}

inline std::string manifest_path(const RunConfig& cfg, const std::string& reader,
                                 std::uint64_t seed) {
    return (std::filesystem::path(cfg.paths.checkpoints) /
            (reader + "-seed" + std::to_string(seed) + ".manifest.json"))
        .string();
}

inline void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) throw InputError(what + " path not configured");
    if (!std::filesystem::exists(path)) throw InputError(what + " not found: " + path);
}

}  // namespace detail

// --------------------------------- ingest ----------------------------------

/// Corpus -> passages -> persisted inverted index. Prints document, passage,
/// and vocabulary counts.
inline void cmd_ingest(const RunConfig& cfg, std::ostream& out) {
    detail::require_file(cfg.paths.corpus, "corpus");
    if (cfg.paths.index.empty()) throw InputError("config: paths.index not set");
    const std::vector<Document> docs = read_corpus_jsonl(cfg.paths.corpus);
    if (docs.empty()) throw InputError("corpus: no documents in " + cfg.paths.corpus);
    std::vector<Passage> passages;
    for (const auto& d : docs) {
        auto split = split_passages(d, cfg.retrieval.passage_width);
        passages.insert(passages.end(), split.begin(), split.end());
    }
    PassageIndex index = build_index(std::move(passages));
    std::filesystem::create_directories(
        std::filesystem::path(cfg.paths.index).parent_path().empty()
            ? "."
            : std::filesystem::path(cfg.paths.index).parent_path().string());
    write_file_atomic(cfg.paths.index, index.serialize());
    out << "ingest: " << docs.size() << " documents, " << index.passage_count() << " passages, "
        << index.vocabulary_size() << " terms -> " << cfg.paths.index << "\n";
}

// ---------------------------------- synth ----------------------------------

/// Writes corpus.jsonl, train.jsonl, dev.jsonl, test.jsonl under out_dir.
inline void cmd_synth(const SynthParams& params, const std::string& out_dir, std::ostream& out) {
    SynthFixture fx = synth_fixture(params);
    std::filesystem::create_directories(out_dir);
    const auto dir = std::filesystem::path(out_dir);
    write_corpus_jsonl((dir / "corpus.jsonl").string(), fx.corpus);
    write_dataset_jsonl((dir / "train.jsonl").string(), fx.train);
    write_dataset_jsonl((dir / "dev.jsonl").string(), fx.dev);
    write_dataset_jsonl((dir / "test.jsonl").string(), fx.test);
    out << "synth: " << fx.corpus.size() << " documents, " << fx.train.size() << " train / "
        << fx.dev.size() << " dev / " << fx.test.size() << " test questions -> " << out_dir
        << "\n";
}

// ---------------------------------- train ----------------------------------

/// Trains one reader for one seed, sweeping gamma for the extractive reader
/// when configured. Saves the best-dev checkpoint plus a manifest recording
/// metrics (and the sweep winner).
inline void cmd_train(const RunConfig& cfg, const std::string& reader, std::uint64_t seed,
                      std::ostream& out) {
    const auto t0 = std::chrono::steady_clock::now();
    detail::require_file(cfg.paths.index, "index");
    detail::require_file(cfg.paths.train, "train dataset");
    detail::require_file(cfg.paths.dev, "dev dataset");
    if (cfg.paths.checkpoints.empty()) throw InputError("config: paths.checkpoints not set");
    std::filesystem::create_directories(cfg.paths.checkpoints);

    const PassageIndex index = PassageIndex::load(cfg.paths.index);
    const auto train_set = read_dataset_jsonl(cfg.paths.train);
    const auto dev_set = read_dataset_jsonl(cfg.paths.dev);
    if (train_set.empty()) throw InputError("train dataset is empty");
    if (dev_set.empty()) throw InputError("dev dataset is empty");

    nlohmann::json metrics_by_seed = nlohmann::json::object();
    nlohmann::json selection;

    if (reader == "extractive") {
        std::vector<double> gammas = cfg.trainer.gamma_sweep;
        if (gammas.empty()) gammas.push_back(cfg.trainer.gamma);
        double best_em = -1.0;
        double winner = gammas.front();
        nlohmann::json sweep = nlohmann::json::array();
        for (double gamma : gammas) {
            out << "train extractive seed " << seed << " gamma " << gamma << "\n";
            ExtractiveTrainResult r =
                train_extractive(cfg, index, train_set, dev_set, seed, gamma, out);
            const std::string suffix =
                gammas.size() > 1 ? "-gamma" + std::to_string(static_cast<int>(gamma)) : "";
            const std::string path = detail::checkpoint_path(cfg, reader, seed, suffix);
            write_file_atomic(path, checkpoint_bytes(r.best_params));
            sweep.push_back({{"gamma", gamma},
                             {"checkpoint", path},
                             {"best_dev_em", r.metrics.best_dev_em}});
            if (r.metrics.best_dev_em > best_em) {
                best_em = r.metrics.best_dev_em;
                winner = gamma;
                write_file_atomic(detail::checkpoint_path(cfg, reader, seed),
                                  checkpoint_bytes(r.best_params));
                metrics_by_seed[std::to_string(seed)] = metrics_to_json(r.metrics);
            }
        }
        if (gammas.size() > 1) {
            selection = {{"gamma_sweep", sweep}, {"gamma_winner", winner}};
            out << "gamma sweep winner: " << winner << " (dev EM " << best_em << ")\n";
        }
    } else if (reader == "generative") {
        out << "train generative seed " << seed << "\n";
        GenerativeTrainResult r = train_generative(cfg, index, train_set, dev_set, seed, out);
        write_file_atomic(detail::checkpoint_path(cfg, reader, seed),
                          checkpoint_bytes(r.best_params));
        metrics_by_seed[std::to_string(seed)] = metrics_to_json(r.metrics);
    } else {
        throw InputError("train: unknown reader '" + reader + "' (extractive|generative)");
    }

    write_run_manifest(detail::manifest_path(cfg, reader, seed), cfg, reader, seed,
                       metrics_by_seed, detail::wall_seconds_since(t0), selection);
    out << "train: checkpoint " << detail::checkpoint_path(cfg, reader, seed) << "\n";
}

// --------------------------------- predict ---------------------------------

/// Reader type is detected from the checkpoint manifest (span-head weights
/// mark an extractive model).
inline bool checkpoint_is_extractive(const NamedParams& params) {
    for (const auto& [name, t] : params)
        if (name == "begin_weight") return true;
    return false;
}

/// Runs every checkpoint over the dataset; one prediction line per question
/// per model, in dataset order.
inline void cmd_predict(const RunConfig& cfg, const std::vector<std::string>& checkpoints,
                        const std::string& dataset_path, const std::string& out_path,
                        std::ostream& out) {
    detail::require_file(cfg.paths.index, "index");
    detail::require_file(dataset_path, "dataset");
    if (checkpoints.empty()) throw InputError("predict: at least one checkpoint required");
    const PassageIndex index = PassageIndex::load(cfg.paths.index);
    const auto dataset = read_dataset_jsonl(dataset_path);
    const Vocabulary vocab = vocabulary_from_index(index);
    const auto retrieved =
        retrieve_for_dataset(index, dataset, cfg.trainer.passages_per_question);

    std::vector<ReaderPrediction> all;
    for (const auto& ckpt_path : checkpoints) {
        detail::require_file(ckpt_path, "checkpoint");
        NamedParams loaded = load_checkpoint(ckpt_path);
        const std::string model_id = std::filesystem::path(ckpt_path).stem().string();
        if (checkpoint_is_extractive(loaded)) {
            EncoderConfig ecfg = cfg.extractive;
            ecfg.vocab_size = vocab.size();
            ExtractiveReader reader = ExtractiveReader::create(ecfg);
            NamedParams target = reader.parameters();
            restore_params(target, loaded);
            auto preds = predict_extractive_dataset(reader, vocab, retrieved,
                                                    cfg.trainer.max_span_length, model_id, out);
            all.insert(all.end(), preds.begin(), preds.end());
        } else {
            Seq2SeqConfig gcfg = cfg.generative;
            gcfg.vocab_size = vocab.size();
            if (gcfg.max_passages < cfg.trainer.passages_per_question)
                gcfg.max_passages = cfg.trainer.passages_per_question;
            Seq2SeqModel model = Seq2SeqModel::create(gcfg);
            NamedParams target = model.parameters();
            restore_params(target, loaded);
            auto preds = predict_generative_dataset(model, vocab, retrieved, model_id, out);
            all.insert(all.end(), preds.begin(), preds.end());
        }
    }
    std::filesystem::create_directories(
        std::filesystem::path(out_path).parent_path().empty()
            ? "."
            : std::filesystem::path(out_path).parent_path().string());
    write_predictions_jsonl(out_path, all);
    out << "predict: " << all.size() << " predictions (" << checkpoints.size() << " model(s), "
        << dataset.size() << " questions) -> " << out_path << "\n";
}

// --------------------------------- ensemble --------------------------------

namespace detail {

struct ModelPredictions {
    std::string model_id;
    ModelType type = ModelType::Extractive;
    std::map<std::string, ReaderPrediction> by_question;
};

inline std::vector<ModelPredictions> group_models(const std::vector<std::string>& files) {
    std::vector<ModelPredictions> models;
    std::map<std::string, std::size_t> index_of;
    for (const auto& file : files) {
        for (auto& p : read_predictions_jsonl(file)) {
            auto it = index_of.find(p.model_id);
            if (it == index_of.end()) {
                index_of[p.model_id] = models.size();
                models.push_back({p.model_id, p.model_type, {}});
                it = index_of.find(p.model_id);
            }
            models[it->second].by_question[p.question_id] = p;
        }
    }
    if (models.empty()) throw InputError("ensemble: no predictions found");
    // identical question sets across all models
    const auto& ref = models.front().by_question;
    for (const auto& m : models) {
        std::vector<std::string> missing, extra;
        for (const auto& [qid, p] : ref)
            if (!m.by_question.count(qid)) missing.push_back(qid);
        for (const auto& [qid, p] : m.by_question)
            if (!ref.count(qid)) extra.push_back(qid);
        if (!missing.empty() || !extra.empty()) {
            std::string msg = "ensemble: question sets differ for model " + m.model_id + ":";
            for (const auto& q : missing) msg += " missing " + q;
            for (const auto& q : extra) msg += " extra " + q;
            throw InputError(msg);
        }
    }
    return models;
}

}  // namespace detail

/// Mixed extractive/generative inputs use the weighted hybrid rule; exactly
/// three homogeneous models use the majority vote; a single model passes
/// through; any other homogeneous set falls back to the (plurality) hybrid
/// rule with a single weight.
inline void cmd_ensemble(const RunConfig& cfg, const std::vector<std::string>& prediction_files,
                         const std::string& out_path, std::ostream& out) {
    auto models = detail::group_models(prediction_files);
    std::size_t n_ext = 0, n_gen = 0;
    for (const auto& m : models) (m.type == ModelType::Extractive ? n_ext : n_gen) += 1;

    std::vector<ReaderPrediction> fused;
    std::string mode;
    if (models.size() == 1) {
        mode = "passthrough";
        for (const auto& [qid, p] : models[0].by_question) fused.push_back(p);
    } else if (n_ext > 0 && n_gen > 0) {
        mode = "hybrid";
        HybridWeights w{cfg.ensemble.tau, cfg.ensemble.delta};
        for (const auto& [qid, p] : models[0].by_question) {
            std::vector<ReaderPrediction> ext, gen;
            for (const auto& m : models)
                (m.type == ModelType::Extractive ? ext : gen).push_back(m.by_question.at(qid));
            ReaderPrediction f;
            f.question_id = qid;
            f.answer = hybrid_select(ext, gen, w);
            f.model_id = "hybrid";
            const std::string key = normalize_answer(f.answer);
            f.model_type = ModelType::Generative;
            for (const auto& m : models)
                if (normalize_answer(m.by_question.at(qid).answer) == key) {
                    f.model_type = m.type;
                    f.score = m.by_question.at(qid).score;
                    break;
                }
            fused.push_back(std::move(f));
        }
    } else if (models.size() == 3) {
        mode = "majority";
        for (const auto& [qid, p] : models[0].by_question) {
            std::vector<ReaderPrediction> votes;
            for (const auto& m : models) votes.push_back(m.by_question.at(qid));
            ReaderPrediction f;
            f.question_id = qid;
            f.answer = majority_vote(votes);
            f.model_id = "majority";
            f.model_type = models[0].type;
            const std::string key = normalize_answer(f.answer);
            for (const auto& v : votes)
                if (normalize_answer(v.answer) == key) {
                    f.score = v.score;
                    break;
                }
            fused.push_back(std::move(f));
        }
    } else {
        mode = "plurality";
        HybridWeights w{1.0, 1.0};
        for (const auto& [qid, p] : models[0].by_question) {
            std::vector<ReaderPrediction> ext, gen;
            for (const auto& m : models)
                (m.type == ModelType::Extractive ? ext : gen).push_back(m.by_question.at(qid));
            ReaderPrediction f;
            f.question_id = qid;
            f.answer = hybrid_select(ext, gen, w);
            f.model_id = "plurality";
            f.model_type = models[0].type;
            fused.push_back(std::move(f));
        }
    }
    write_predictions_jsonl(out_path, fused);
    out << "ensemble (" << mode << "): " << models.size() << " models, " << fused.size()
        << " questions -> " << out_path << "\n";
}

// --------------------------------- evaluate --------------------------------

inline nlohmann::json evaluate_predictions(const std::vector<ReaderPrediction>& preds,
                                           const std::vector<QAExample>& dataset) {
    std::unordered_map<std::string, std::string> by_id;
    for (const auto& p : preds) by_id[p.question_id] = p.answer;
    nlohmann::json j;
    j["em"] = em_score(by_id, dataset);
    j["questions"] = dataset.size();

    bool all_annotated = true;
    for (const auto& ex : dataset) all_annotated = all_annotated && ex.overlap.has_value();
    if (all_annotated) {
        BreakdownReport rep = breakdown_eval(by_id, dataset);
        auto cat = [](const CategoryEm& c) {
            return nlohmann::json{{"count", c.count}, {"em", c.em}};
        };
        j["breakdown"] = {{"total", cat(rep.total)},
                          {"question_overlap", cat(rep.question_overlap)},
                          {"no_question_overlap", cat(rep.no_question_overlap)},
                          {"answer_overlap", cat(rep.answer_overlap)},
                          {"answer_overlap_only", cat(rep.answer_overlap_only)},
                          {"no_overlap", cat(rep.no_overlap)}};
    }
    nlohmann::json wh = nlohmann::json::object();
    for (const auto& [category, st] : wh_relative_accuracy(by_id, dataset)) {
        nlohmann::json entry{{"count", st.count}, {"em", st.em}};
        if (st.relative)
            entry["relative"] = *st.relative;
        else
            entry["relative"] = nullptr;  // undefined: overall EM is zero
        wh[category] = entry;
    }
    j["wh"] = wh;
    return j;
}

inline void cmd_evaluate(const RunConfig&, const std::string& predictions_path,
                         const std::string& dataset_path, const std::string& out_path,
                         std::ostream& out) {
    detail::require_file(predictions_path, "predictions");
    detail::require_file(dataset_path, "dataset");
    const auto preds = read_predictions_jsonl(predictions_path);
    const auto dataset = read_dataset_jsonl(dataset_path);
    nlohmann::json j = evaluate_predictions(preds, dataset);
    if (!out_path.empty()) write_file_atomic(out_path, j.dump(2) + "\n");
    out << "evaluate: EM " << j["em"].get<double>() << " over " << dataset.size()
        << " questions";
    if (!out_path.empty()) out << " -> " << out_path;
    out << "\n";
}

// ---------------------------------- report ---------------------------------

/// Structural validation of the documented report schema.
inline void validate_report(const nlohmann::json& r) {
    auto need = [&r](const char* field) {
        if (!r.contains(field)) throw InputError(std::string("report: missing field ") + field);
    };
    need("models");
    need("overall_em_median");
    need("agreement_matrix");
    need("topk_accuracy");
    const double med = r.at("overall_em_median").get<double>();
    if (med < 0.0 || med > 1.0) throw InputError("report: overall_em_median out of [0,1]");
    for (const auto& m : r.at("models")) {
        if (!m.contains("model_id") || !m.contains("em"))
            throw InputError("report: model entry missing model_id/em");
        const double em = m.at("em").get<double>();
        if (em < 0.0 || em > 1.0) throw InputError("report: model em out of [0,1]");
    }
    const auto& agreement = r.at("agreement_matrix");
    if (!agreement.contains("models") || !agreement.contains("matrix"))
        throw InputError("report: agreement_matrix needs models and matrix");
    const std::size_t n = agreement.at("models").size();
    if (agreement.at("matrix").size() != n)
        throw InputError("report: agreement matrix is not square");
    for (std::size_t i = 0; i < n; ++i) {
        if (agreement.at("matrix")[i].size() != n)
            throw InputError("report: agreement matrix is not square");
        const double diag = agreement.at("matrix")[i][i].get<double>();
        if (diag != 1.0) throw InputError("report: agreement diagonal must be 1");
    }
    for (const auto& [k, v] : r.at("topk_accuracy").items()) {
        const double acc = v.get<double>();
        if (acc < 0.0 || acc > 1.0) throw InputError("report: topk accuracy out of [0,1]");
    }
}

inline std::string render_report_text(const nlohmann::json& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "== Exact match ==\n";
    for (const auto& m : r.at("models"))
        os << "  " << std::left << std::setw(28) << m.at("model_id").get<std::string>()
           << m.at("em").get<double>() << "\n";
    os << "  " << std::left << std::setw(28) << "median"
       << r.at("overall_em_median").get<double>() << "\n";

    if (r.contains("training") && !r.at("training").empty()) {
        os << "\n== Training (per seed) ==\n";
        for (const auto& t : r.at("training"))
            os << "  " << t.at("reader").get<std::string>() << " seed "
               << t.at("seed").get<std::uint64_t>() << ": best dev EM "
               << t.at("best_dev_em").get<double>() << " (epoch "
               << t.at("best_epoch").get<std::size_t>() << ")\n";
    }

    os << "\n== Top-k retrieval accuracy ==\n";
    std::vector<std::pair<std::size_t, double>> topk_rows;
    for (const auto& [k, v] : r.at("topk_accuracy").items())
        topk_rows.emplace_back(std::stoull(k), v.get<double>());
    std::sort(topk_rows.begin(), topk_rows.end());
    for (const auto& [k, v] : topk_rows)
        os << "  top-" << std::left << std::setw(24) << k << v << "\n";

    const auto& first = r.at("models")[0];
    if (first.contains("breakdown")) {
        os << "\n== Breakdown (EM by overlap category) ==\n";
        os << "  " << std::left << std::setw(28) << "model";
        for (const char* col : {"total", "q-overlap", "no-q-overlap", "a-overlap", "a-only",
                                "no-overlap"})
            os << std::setw(12) << col;
        os << "\n";
        for (const auto& m : r.at("models")) {
            if (!m.contains("breakdown")) continue;
            const auto& b = m.at("breakdown");
            os << "  " << std::left << std::setw(28) << m.at("model_id").get<std::string>();
            for (const char* key : {"total", "question_overlap", "no_question_overlap",
                                    "answer_overlap", "answer_overlap_only", "no_overlap"})
                os << std::setw(12) << b.at(key).at("em").get<double>();
            os << "\n";
        }
    }

    if (first.contains("wh")) {
        os << "\n== Relative accuracy by WH category (model "
           << first.at("model_id").get<std::string>() << ") ==\n";
        for (const auto& [category, st] : first.at("wh").items()) {
            os << "  " << std::left << std::setw(10) << category << "n=" << std::setw(6)
               << st.at("count").get<std::size_t>();
            if (st.at("relative").is_null())
                os << "relative undefined (overall EM is zero)";
            else
                os << "relative " << st.at("relative").get<double>();
            os << "\n";
        }
    }

    os << "\n== Pairwise agreement ==\n";
    const auto& agreement = r.at("agreement_matrix");
    os << "  " << std::left << std::setw(28) << "";
    for (const auto& id : agreement.at("models"))
        os << std::setw(14) << id.get<std::string>().substr(0, 13);
    os << "\n";
    for (std::size_t i = 0; i < agreement.at("models").size(); ++i) {
        os << "  " << std::left << std::setw(28)
           << agreement.at("models")[i].get<std::string>();
        for (const auto& v : agreement.at("matrix")[i]) os << std::setw(14) << v.get<double>();
        os << "\n";
    }
    return os.str();
}

/// Aggregates prediction files, manifests, the dataset, and the index into
/// the report JSON (schema checked by validate_report) plus a text table.
inline nlohmann::json build_report(const RunConfig& cfg,
                                   const std::vector<std::string>& manifest_paths,
                                   const std::vector<std::string>& prediction_files,
                                   const std::string& dataset_path, std::ostream& out) {
    detail::require_file(dataset_path, "dataset");
    const auto dataset = read_dataset_jsonl(dataset_path);
    if (prediction_files.empty()) throw InputError("report: at least one prediction file required");

    nlohmann::json report;
    std::vector<std::vector<ReaderPrediction>> model_preds;
    std::vector<std::string> model_ids;
    std::vector<double> ems;
    nlohmann::json models = nlohmann::json::array();
    for (const auto& file : prediction_files) {
        auto preds = read_predictions_jsonl(file);
        if (preds.empty()) throw InputError("report: empty prediction file " + file);
        nlohmann::json j = evaluate_predictions(preds, dataset);
        j["model_id"] = preds.front().model_id;
        models.push_back(j);
        ems.push_back(j["em"].get<double>());
        model_ids.push_back(preds.front().model_id);
        model_preds.push_back(std::move(preds));
    }
    report["models"] = models;
    std::vector<double> sorted = ems;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    report["overall_em_median"] =
        n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

    nlohmann::json agreement;
    agreement["models"] = model_ids;
    nlohmann::json matrix = nlohmann::json::array();
    for (std::size_t i = 0; i < model_preds.size(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t j = 0; j < model_preds.size(); ++j)
            row.push_back(i == j ? 1.0 : agreement_ratio(model_preds[i], model_preds[j]));
        matrix.push_back(row);
    }
    agreement["matrix"] = matrix;
    report["agreement_matrix"] = agreement;

    // top-k retrieval accuracy over the configured curve
    detail::require_file(cfg.paths.index, "index");
    const PassageIndex index = PassageIndex::load(cfg.paths.index);
    std::vector<std::size_t> k_values;
    for (auto k : cfg.report_k_values)
        if (k <= index.passage_count()) k_values.push_back(k);
    nlohmann::json topk = nlohmann::json::object();
    if (!k_values.empty()) {
        const std::size_t max_k = *std::max_element(k_values.begin(), k_values.end());
        std::vector<RetrievalResult> retrievals;
        for (const auto& ex : dataset)
            retrievals.push_back(retrieve(index, tokenize(ex.question), max_k));
        for (const auto& [k, acc] : topk_retrieval_accuracy(retrievals, index, dataset, k_values))
            topk[std::to_string(k)] = acc;
    }
    report["topk_accuracy"] = topk;

    nlohmann::json training = nlohmann::json::array();
    for (const auto& mp : manifest_paths) {
        detail::require_file(mp, "manifest");
        std::ifstream f(mp);
        nlohmann::json m;
        try {
            m = nlohmann::json::parse(f);
        } catch (const nlohmann::json::exception& e) {
            throw InputError("manifest: " + mp + ": " + e.what());
        }
        for (const auto& [seed, metrics] : m.at("metrics").items())
            training.push_back({{"reader", m.value("reader", "?")},
                                {"seed", std::stoull(seed)},
                                {"best_dev_em", metrics.at("best_dev_em").get<double>()},
                                {"best_epoch", metrics.at("best_epoch").get<std::size_t>()},
                                {"gamma", metrics.value("gamma", 0.0)}});
    }
    report["training"] = training;

    validate_report(report);
    out << "report: " << model_preds.size() << " models, median EM "
        << report["overall_em_median"].get<double>() << "\n";
    return report;
}

inline void cmd_report(const RunConfig& cfg, const std::vector<std::string>& manifest_paths,
                       const std::vector<std::string>& prediction_files,
                       const std::string& dataset_path, const std::string& out_prefix,
                       std::ostream& out) {
    nlohmann::json report = build_report(cfg, manifest_paths, prediction_files, dataset_path, out);
    if (!out_prefix.empty()) {
        const auto parent = std::filesystem::path(out_prefix).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        write_file_atomic(out_prefix + ".json", report.dump(2) + "\n");
        write_file_atomic(out_prefix + ".txt", render_report_text(report));
        out << "report: wrote " << out_prefix << ".json and " << out_prefix << ".txt\n";
    }
}

}  // namespace unitedqa
