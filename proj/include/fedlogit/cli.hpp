#pragma once

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fedlogit/aggregation.hpp"
#include "fedlogit/experiment.hpp"

namespace fedlogit {

namespace cli_detail {

// Every experiment config key has a mirroring flag; flags win over file values.
struct ExperimentFlags {
    std::string config_path;
    std::string dataset_source;
    std::size_t classes = 0, dim = 0, per_class = 0;
    double separation = 0.0;
    std::string idx_images, idx_labels, idx_test_images, idx_test_labels;
    std::size_t clients = 0, private_size = 0, public_size = 0, meta_size = 0, test_size = 0;
    double validation_fraction = 0.0;
    int rounds = 0, first_local_epochs = 0, first_distill_epochs = 0, local_epochs = 0,
        distill_epochs = 0;
    std::size_t batch_size = 0, hidden = 0;
    double learning_rate = 0.0, temperature = 0.0, convergence_threshold = 0.0;
    double adam_beta1 = 0.0, adam_beta2 = 0.0;
    bool uwa_allow_missing = false;
    std::string meta_refresh, activation;
    std::size_t meta_hidden = 0, meta_batch_size = 0;
    int meta_epochs = 0;
    double meta_learning_rate = 0.0;
    std::vector<std::string> strategies;
    std::vector<std::size_t> k_values;
    std::vector<std::uint64_t> seeds;
    std::string out_dir;
};

inline void add_experiment_flags(CLI::App* cmd, ExperimentFlags& f) {
    // Scalar flags take the last occurrence so they can override config files
    // and earlier flags alike.
    auto scalar = [cmd](const std::string& name, auto& target, const std::string& desc) {
        return cmd->add_option(name, target, desc)
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    };
    scalar("--config", f.config_path, "JSON experiment config file");
    scalar("--dataset", f.dataset_source, "Dataset source: synthetic or idx");
    scalar("--classes", f.classes, "Synthetic: number of classes");
    scalar("--dim", f.dim, "Synthetic: feature dimension");
    scalar("--per-class", f.per_class, "Synthetic: samples generated per class");
    scalar("--separation", f.separation, "Synthetic: minimum distance between class means");
    scalar("--idx-images", f.idx_images, "IDX: training images file");
    scalar("--idx-labels", f.idx_labels, "IDX: training labels file");
    scalar("--idx-test-images", f.idx_test_images, "IDX: test images file");
    scalar("--idx-test-labels", f.idx_test_labels, "IDX: test labels file");
    scalar("--clients", f.clients, "Number of federated clients M");
    scalar("--private-size", f.private_size, "Private samples per client");
    scalar("--public-size", f.public_size, "Shared public set size");
    scalar("--meta-size", f.meta_size, "Meta-training set size");
    scalar("--test-size", f.test_size, "Held-out test set size (synthetic)");
    scalar("--validation-fraction", f.validation_fraction,
           "Fraction of each private draw held out for validation");
    scalar("--rounds", f.rounds, "Communication rounds R");
    scalar("--first-local-epochs", f.first_local_epochs, "Local epochs in round 1");
    scalar("--first-distill-epochs", f.first_distill_epochs, "Distill epochs in round 1");
    scalar("--local-epochs", f.local_epochs, "Local epochs in later rounds");
    scalar("--distill-epochs", f.distill_epochs, "Distill epochs in later rounds");
    scalar("--batch-size", f.batch_size, "Minibatch size");
    scalar("--learning-rate", f.learning_rate, "Adam learning rate");
    scalar("--adam-beta1", f.adam_beta1, "Adam first-moment decay");
    scalar("--adam-beta2", f.adam_beta2, "Adam second-moment decay");
    scalar("--temperature", f.temperature, "Distillation soft-target temperature");
    cmd->add_flag("--uwa-allow-missing", f.uwa_allow_missing,
                  "Renormalize UWA weights over present clients instead of failing");
    scalar("--meta-refresh", f.meta_refresh, "Meta aggregator refresh: once or every-round");
    scalar("--hidden", f.hidden, "Client model hidden width");
    scalar("--activation", f.activation, "Hidden activation: relu or tanh");
    scalar("--meta-hidden", f.meta_hidden, "Meta aggregator hidden width");
    scalar("--meta-epochs", f.meta_epochs, "Meta aggregator training epochs");
    scalar("--meta-learning-rate", f.meta_learning_rate, "Meta aggregator learning rate");
    scalar("--meta-batch-size", f.meta_batch_size, "Meta aggregator batch size");
    scalar("--convergence-threshold", f.convergence_threshold,
           "Accuracy threshold for the convergence round");
    cmd->add_option("--strategy", f.strategies, "Aggregation strategies to sweep")->delimiter(',');
    cmd->add_option("--k", f.k_values, "Classes-per-client values to sweep")->delimiter(',');
    cmd->add_option("--seed", f.seeds, "Seeds to sweep")->delimiter(',');
    scalar("--out", f.out_dir, "Output directory")->envname("FEDLOGIT_OUT");
}

inline ExperimentConfig resolve_config(const CLI::App* cmd, const ExperimentFlags& f) {
    ExperimentConfig cfg;
    if (cmd->count("--config") > 0) cfg = load_config_file(f.config_path);

    auto set = [&](const char* flag, auto& target, const auto& value) {
        if (cmd->count(flag) > 0) target = value;
    };
    set("--dataset", cfg.dataset.source, f.dataset_source);
    set("--classes", cfg.dataset.classes, f.classes);
    set("--dim", cfg.dataset.dim, f.dim);
    set("--per-class", cfg.dataset.per_class, f.per_class);
    set("--separation", cfg.dataset.separation, f.separation);
    set("--idx-images", cfg.dataset.images, f.idx_images);
    set("--idx-labels", cfg.dataset.labels, f.idx_labels);
    set("--idx-test-images", cfg.dataset.test_images, f.idx_test_images);
    set("--idx-test-labels", cfg.dataset.test_labels, f.idx_test_labels);
    set("--clients", cfg.partition.clients, f.clients);
    set("--private-size", cfg.partition.private_size, f.private_size);
    set("--public-size", cfg.partition.public_size, f.public_size);
    set("--meta-size", cfg.partition.meta_size, f.meta_size);
    set("--test-size", cfg.partition.test_size, f.test_size);
    set("--validation-fraction", cfg.partition.validation_fraction, f.validation_fraction);
    set("--rounds", cfg.federation.rounds, f.rounds);
    set("--first-local-epochs", cfg.federation.first_local_epochs, f.first_local_epochs);
    set("--first-distill-epochs", cfg.federation.first_distill_epochs, f.first_distill_epochs);
    set("--local-epochs", cfg.federation.local_epochs, f.local_epochs);
    set("--distill-epochs", cfg.federation.distill_epochs, f.distill_epochs);
    set("--batch-size", cfg.federation.batch_size, f.batch_size);
    set("--learning-rate", cfg.federation.learning_rate, f.learning_rate);
    set("--adam-beta1", cfg.federation.adam_beta1, f.adam_beta1);
    set("--adam-beta2", cfg.federation.adam_beta2, f.adam_beta2);
    set("--temperature", cfg.federation.temperature, f.temperature);
    set("--uwa-allow-missing", cfg.federation.uwa_allow_missing, f.uwa_allow_missing);
    set("--hidden", cfg.federation.hidden_width, f.hidden);
    set("--meta-hidden", cfg.federation.meta_train.hidden, f.meta_hidden);
    set("--meta-epochs", cfg.federation.meta_train.epochs, f.meta_epochs);
    set("--meta-learning-rate", cfg.federation.meta_train.learning_rate, f.meta_learning_rate);
    set("--meta-batch-size", cfg.federation.meta_train.batch_size, f.meta_batch_size);
    set("--convergence-threshold", cfg.convergence_threshold, f.convergence_threshold);
    set("--strategy", cfg.strategies, f.strategies);
    set("--k", cfg.k_values, f.k_values);
    set("--seed", cfg.seeds, f.seeds);
    set("--out", cfg.out_dir, f.out_dir);
    if (cmd->count("--meta-refresh") > 0)
        cfg.federation.meta_refresh = meta_refresh_from_string(f.meta_refresh);
    if (cmd->count("--activation") > 0)
        cfg.federation.activation = activation_from_string(f.activation);
    return cfg;
}

inline void write_aggregate_csv(const AggregatedTargets& targets, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    const std::size_t C = targets.values.cols;
    for (std::size_t j = 0; j < C; ++j) out << (j ? "," : "") << "z" << j;
    for (std::size_t j = 0; j < C; ++j) out << ",p" << j;
    out << "\n";
    char buf[64];
    for (std::size_t i = 0; i < targets.values.rows; ++i) {
        for (std::size_t j = 0; j < C; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", targets.values(i, j));
            out << (j ? "," : "") << buf;
        }
        for (std::size_t j = 0; j < C; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", targets.soft_labels(i, j));
            out << "," << buf;
        }
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"fedlogit: logit-based federated distillation simulator"};
    app.require_subcommand(1);

    cli_detail::ExperimentFlags run_flags;
    auto* run_cmd = app.add_subcommand("run", "Run a federation sweep and write reports");
    cli_detail::add_experiment_flags(run_cmd, run_flags);

    cli_detail::ExperimentFlags inspect_flags;
    auto* inspect_cmd = app.add_subcommand(
        "partition-inspect", "Build the federation partition and print its manifest");
    cli_detail::add_experiment_flags(inspect_cmd, inspect_flags);

    auto* agg_cmd =
        app.add_subcommand("aggregate-file", "Apply an aggregation strategy to logit dumps");
    std::vector<std::string> logit_files;
    std::vector<std::string> density_files;
    std::string aggregator_file, strategy_name = "average", agg_out;
    double agg_temperature = 1.0;
    agg_cmd->add_option("files", logit_files, "Binary logit dumps, one per client")->required();
    agg_cmd->add_option("--strategy", strategy_name, "average, uwa or meta");
    agg_cmd->add_option("--density", density_files,
                        "Density dumps for uwa, one per client, same order as the logit files");
    agg_cmd->add_option("--aggregator", aggregator_file, "Trained aggregator dump for meta");
    agg_cmd->add_option("--temperature", agg_temperature, "Soft-target temperature");
    agg_cmd->add_option("--out", agg_out, "Output CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (run_cmd->parsed()) {
            ExperimentConfig cfg = cli_detail::resolve_config(run_cmd, run_flags);
            return run_experiment(cfg);
        }
        if (inspect_cmd->parsed()) {
            ExperimentConfig cfg = cli_detail::resolve_config(inspect_cmd, inspect_flags);
            validate(cfg);
            FederationData data = build_federation_data(cfg, cfg.k_values.front(), cfg.seeds.front());
            std::cout << data.manifest().dump(2) << "\n";
            return 0;
        }
        if (agg_cmd->parsed()) {
            std::vector<LogitMatrix> logits;
            for (const auto& f : logit_files) logits.push_back(load_logits(f));
            Strategy strategy = strategy_from_string(strategy_name);
            AggregatedTargets targets;
            switch (strategy) {
                case Strategy::Average:
                    targets = average_logits(logits, agg_temperature);
                    break;
                case Strategy::Uwa: {
                    if (density_files.size() != logit_files.size())
                        throw ConfigError("aggregate-file: uwa needs one --density per logit file");
                    std::vector<GaussianMixtureDensity> densities;
                    for (const auto& f : density_files) densities.push_back(load_density(f));
                    UwaOptions options;
                    options.temperature = agg_temperature;
                    targets = uwa_aggregate(logits, densities, options);
                    break;
                }
                case Strategy::Meta: {
                    if (aggregator_file.empty())
                        throw ConfigError("aggregate-file: meta needs --aggregator");
                    MetaAggregator agg = load_meta_aggregator(aggregator_file);
                    targets = meta_aggregate(agg, logits, agg_temperature);
                    break;
                }
            }
            cli_detail::write_aggregate_csv(targets, agg_out);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "fedlogit: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

inline int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("fedlogit");
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace fedlogit
