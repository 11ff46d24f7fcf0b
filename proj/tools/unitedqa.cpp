#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "unitedqa/commands.hpp"

using namespace unitedqa;

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale hybrid open-domain QA pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::string reader = "extractive";
    std::string dataset_path;
    std::string out_path;
    std::vector<std::string> checkpoints;
    std::vector<std::string> prediction_files;
    std::vector<std::string> manifest_paths;
    std::uint64_t seed = 1;
    std::size_t k_override = 0;

    SynthParams synth_params;
    std::string synth_out = "data";

    auto add_config = [&config_path](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "run configuration JSON")->required();
    };

    CLI::App* ingest = app.add_subcommand("ingest", "split a corpus and build the BM25 index");
    add_config(ingest);

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic corpus + QA fixtures");
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--docs", synth_params.num_docs, "number of documents");
    synth->add_option("--train", synth_params.num_train, "number of training questions");
    synth->add_option("--test", synth_params.num_test, "number of test questions");
    synth->add_option("--seed", synth_params.seed, "generator seed");

    CLI::App* train = app.add_subcommand("train", "train a reader");
    add_config(train);
    train->add_option("--reader", reader, "extractive|generative");
    train->add_option("--seed", seed, "training seed");

    CLI::App* predict = app.add_subcommand("predict", "run checkpoints over a dataset");
    add_config(predict);
    predict->add_option("--checkpoint", checkpoints, "checkpoint file(s)")->required();
    predict->add_option("--dataset", dataset_path, "dataset JSONL (default: paths.test)");
    predict->add_option("--out", out_path, "predictions output path")->required();
    predict->add_option("--k", k_override, "passages per question override");

    CLI::App* ensemble = app.add_subcommand("ensemble", "fuse prediction files");
    add_config(ensemble);
    ensemble->add_option("--predictions", prediction_files, "prediction JSONL file(s)")->required();
    ensemble->add_option("--out", out_path, "fused predictions output path")->required();

    CLI::App* evaluate = app.add_subcommand("evaluate", "score predictions against a dataset");
    add_config(evaluate);
    evaluate->add_option("--predictions", prediction_files, "prediction JSONL file")->required();
    evaluate->add_option("--dataset", dataset_path, "dataset JSONL (default: paths.test)");
    evaluate->add_option("--out", out_path, "metrics JSON output path");

    CLI::App* report = app.add_subcommand("report", "aggregate manifests and predictions");
    add_config(report);
    report->add_option("--manifest", manifest_paths, "training manifest(s)");
    report->add_option("--predictions", prediction_files, "prediction JSONL file(s)")->required();
    report->add_option("--dataset", dataset_path, "dataset JSONL (default: paths.test)");
    report->add_option("--out", out_path, "output prefix (.json/.txt appended)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            cmd_synth(synth_params, synth_out, std::cout);
            return 0;
        }
        RunConfig cfg = RunConfig::load(config_path);
        if (k_override > 0) cfg.trainer.passages_per_question = k_override;
        const std::string dataset = dataset_path.empty() ? cfg.paths.test : dataset_path;
        if (ingest->parsed()) {
            cmd_ingest(cfg, std::cout);
        } else if (train->parsed()) {
            cmd_train(cfg, reader, seed, std::cout);
        } else if (predict->parsed()) {
            cmd_predict(cfg, checkpoints, dataset, out_path, std::cout);
        } else if (ensemble->parsed()) {
            cmd_ensemble(cfg, prediction_files, out_path, std::cout);
        } else if (evaluate->parsed()) {
            cmd_evaluate(cfg, prediction_files.front(), dataset, out_path, std::cout);
        } else if (report->parsed()) {
            cmd_report(cfg, manifest_paths, prediction_files, dataset, out_path, std::cout);
        }
        return 0;
    } catch (const NoTrainableData& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}
