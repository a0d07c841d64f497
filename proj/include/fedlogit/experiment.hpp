#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedlogit/data.hpp"
#include "fedlogit/errors.hpp"
#include "fedlogit/federation.hpp"
#include "fedlogit/reporting.hpp"

namespace fedlogit {

// Where samples come from: synthetic Gaussian blobs or IDX image files.
struct DataConfig {
    std::string source = "synthetic";  // "synthetic" | "idx"
    // synthetic
    std::size_t classes = 10;
    std::size_t dim = 64;
    std::size_t per_class = 400;
    double separation = 7.0;
    // idx
    std::string images, labels, test_images, test_labels;
};

// Declarative description of a sweep: strategies x k values x seeds.
struct ExperimentConfig {
    DataConfig dataset;
    PartitionSpec partition;      // classes_per_client and seed filled per cell
    FederationConfig federation;  // strategy and seed filled per cell
    std::vector<std::string> strategies = {"average", "uwa", "meta"};
    std::vector<std::size_t> k_values = {2};
    std::vector<std::uint64_t> seeds = {1};
    double convergence_threshold = 0.01;
    std::string out_dir = "out";
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& context,
                       const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("config: " + context + " must be an object");
    for (const auto& item : j.items())
        if (!allowed.contains(item.key()))
            throw ConfigError("config: unknown key \"" + item.key() + "\" in " + context);
}

template <class T>
inline T get_or(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config: bad value for key \"") + key + "\"");
    }
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    detail::check_keys(j, "top level",
                       {"dataset", "partition", "federation", "model", "meta_aggregator",
                        "strategies", "k", "seeds", "convergence_threshold", "out_dir"});
    ExperimentConfig cfg;

    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        detail::check_keys(d, "dataset",
                           {"source", "classes", "dim", "per_class", "separation", "images",
                            "labels", "test_images", "test_labels"});
        cfg.dataset.source = detail::get_or<std::string>(d, "source", cfg.dataset.source);
        cfg.dataset.classes = detail::get_or<std::size_t>(d, "classes", cfg.dataset.classes);
        cfg.dataset.dim = detail::get_or<std::size_t>(d, "dim", cfg.dataset.dim);
        cfg.dataset.per_class = detail::get_or<std::size_t>(d, "per_class", cfg.dataset.per_class);
        cfg.dataset.separation = detail::get_or<double>(d, "separation", cfg.dataset.separation);
        cfg.dataset.images = detail::get_or<std::string>(d, "images", "");
        cfg.dataset.labels = detail::get_or<std::string>(d, "labels", "");
        cfg.dataset.test_images = detail::get_or<std::string>(d, "test_images", "");
        cfg.dataset.test_labels = detail::get_or<std::string>(d, "test_labels", "");
    }

    if (j.contains("partition")) {
        const auto& p = j.at("partition");
        detail::check_keys(p, "partition",
                           {"clients", "private_size", "public_size", "meta_size", "test_size",
                            "validation_fraction"});
        cfg.partition.clients = detail::get_or<std::size_t>(p, "clients", cfg.partition.clients);
        cfg.partition.private_size =
            detail::get_or<std::size_t>(p, "private_size", cfg.partition.private_size);
        cfg.partition.public_size =
            detail::get_or<std::size_t>(p, "public_size", cfg.partition.public_size);
        cfg.partition.meta_size =
            detail::get_or<std::size_t>(p, "meta_size", cfg.partition.meta_size);
        cfg.partition.test_size =
            detail::get_or<std::size_t>(p, "test_size", cfg.partition.test_size);
        cfg.partition.validation_fraction =
            detail::get_or<double>(p, "validation_fraction", cfg.partition.validation_fraction);
    }

    if (j.contains("federation")) {
        const auto& f = j.at("federation");
        detail::check_keys(f, "federation",
                           {"rounds", "first_local_epochs", "first_distill_epochs", "local_epochs",
                            "distill_epochs", "batch_size", "learning_rate", "adam_beta1",
                            "adam_beta2", "temperature", "meta_refresh", "uwa_allow_missing"});
        auto& fc = cfg.federation;
        fc.rounds = detail::get_or<int>(f, "rounds", fc.rounds);
        fc.first_local_epochs = detail::get_or<int>(f, "first_local_epochs", fc.first_local_epochs);
        fc.first_distill_epochs =
            detail::get_or<int>(f, "first_distill_epochs", fc.first_distill_epochs);
        fc.local_epochs = detail::get_or<int>(f, "local_epochs", fc.local_epochs);
        fc.distill_epochs = detail::get_or<int>(f, "distill_epochs", fc.distill_epochs);
        fc.batch_size = detail::get_or<std::size_t>(f, "batch_size", fc.batch_size);
        fc.learning_rate = detail::get_or<double>(f, "learning_rate", fc.learning_rate);
        fc.adam_beta1 = detail::get_or<double>(f, "adam_beta1", fc.adam_beta1);
        fc.adam_beta2 = detail::get_or<double>(f, "adam_beta2", fc.adam_beta2);
        fc.temperature = detail::get_or<double>(f, "temperature", fc.temperature);
        fc.meta_refresh = meta_refresh_from_string(
            detail::get_or<std::string>(f, "meta_refresh", to_string(fc.meta_refresh)));
        fc.uwa_allow_missing = detail::get_or<bool>(f, "uwa_allow_missing", fc.uwa_allow_missing);
    }

    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::check_keys(m, "model", {"hidden", "activation"});
        cfg.federation.hidden_width =
            detail::get_or<std::size_t>(m, "hidden", cfg.federation.hidden_width);
        cfg.federation.activation = activation_from_string(
            detail::get_or<std::string>(m, "activation", to_string(cfg.federation.activation)));
    }

    if (j.contains("meta_aggregator")) {
        const auto& m = j.at("meta_aggregator");
        detail::check_keys(m, "meta_aggregator", {"hidden", "epochs", "learning_rate", "batch_size"});
        auto& mt = cfg.federation.meta_train;
        mt.hidden = detail::get_or<std::size_t>(m, "hidden", mt.hidden);
        mt.epochs = detail::get_or<int>(m, "epochs", mt.epochs);
        mt.learning_rate = detail::get_or<double>(m, "learning_rate", mt.learning_rate);
        mt.batch_size = detail::get_or<std::size_t>(m, "batch_size", mt.batch_size);
    }

    cfg.strategies = detail::get_or<std::vector<std::string>>(j, "strategies", cfg.strategies);
    cfg.k_values = detail::get_or<std::vector<std::size_t>>(j, "k", cfg.k_values);
    cfg.seeds = detail::get_or<std::vector<std::uint64_t>>(j, "seeds", cfg.seeds);
    cfg.convergence_threshold =
        detail::get_or<double>(j, "convergence_threshold", cfg.convergence_threshold);
    cfg.out_dir = detail::get_or<std::string>(j, "out_dir", cfg.out_dir);
    return cfg;
}

inline nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::ordered_json j;
    j["dataset"] = {{"source", cfg.dataset.source},
                    {"classes", cfg.dataset.classes},
                    {"dim", cfg.dataset.dim},
                    {"per_class", cfg.dataset.per_class},
                    {"separation", cfg.dataset.separation},
                    {"images", cfg.dataset.images},
                    {"labels", cfg.dataset.labels},
                    {"test_images", cfg.dataset.test_images},
                    {"test_labels", cfg.dataset.test_labels}};
    j["partition"] = {{"clients", cfg.partition.clients},
                      {"private_size", cfg.partition.private_size},
                      {"public_size", cfg.partition.public_size},
                      {"meta_size", cfg.partition.meta_size},
                      {"test_size", cfg.partition.test_size},
                      {"validation_fraction", cfg.partition.validation_fraction}};
    j["federation"] = {{"rounds", cfg.federation.rounds},
                       {"first_local_epochs", cfg.federation.first_local_epochs},
                       {"first_distill_epochs", cfg.federation.first_distill_epochs},
                       {"local_epochs", cfg.federation.local_epochs},
                       {"distill_epochs", cfg.federation.distill_epochs},
                       {"batch_size", cfg.federation.batch_size},
                       {"learning_rate", cfg.federation.learning_rate},
                       {"adam_beta1", cfg.federation.adam_beta1},
                       {"adam_beta2", cfg.federation.adam_beta2},
                       {"temperature", cfg.federation.temperature},
                       {"meta_refresh", to_string(cfg.federation.meta_refresh)},
                       {"uwa_allow_missing", cfg.federation.uwa_allow_missing}};
    j["model"] = {{"hidden", cfg.federation.hidden_width},
                  {"activation", to_string(cfg.federation.activation)}};
    j["meta_aggregator"] = {{"hidden", cfg.federation.meta_train.hidden},
                            {"epochs", cfg.federation.meta_train.epochs},
                            {"learning_rate", cfg.federation.meta_train.learning_rate},
                            {"batch_size", cfg.federation.meta_train.batch_size}};
    j["strategies"] = cfg.strategies;
    j["k"] = cfg.k_values;
    j["seeds"] = cfg.seeds;
    j["convergence_threshold"] = cfg.convergence_threshold;
    j["out_dir"] = cfg.out_dir;
    return j;
}

inline ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("config file " + path + ": " + e.what());
    }
    return config_from_json(j);
}

inline void validate(const ExperimentConfig& cfg) {
    if (cfg.strategies.empty()) throw ConfigError("config: need at least one strategy");
    for (const auto& s : cfg.strategies) strategy_from_string(s);  // throws on unknown
    if (cfg.k_values.empty()) throw ConfigError("config: need at least one k");
    for (std::size_t k : cfg.k_values)
        if (k == 0) throw ConfigError("config: k must be >= 1");
    if (cfg.seeds.empty()) throw ConfigError("config: need at least one seed");
    if (cfg.dataset.source != "synthetic" && cfg.dataset.source != "idx")
        throw ConfigError("config: dataset.source must be synthetic or idx");
    if (cfg.dataset.source == "synthetic") {
        if (cfg.dataset.classes < 2) throw ConfigError("config: dataset.classes must be >= 2");
        if (cfg.dataset.dim < 1) throw ConfigError("config: dataset.dim must be >= 1");
        if (cfg.dataset.per_class < 1) throw ConfigError("config: dataset.per_class must be >= 1");
    } else {
        if (cfg.dataset.images.empty() || cfg.dataset.labels.empty() ||
            cfg.dataset.test_images.empty() || cfg.dataset.test_labels.empty())
            throw ConfigError(
                "config: idx source requires images, labels, test_images and test_labels");
    }
    if (cfg.out_dir.empty()) throw ConfigError("config: out_dir must not be empty");
    if (!(cfg.convergence_threshold > 0.0))
        throw ConfigError("config: convergence_threshold must be positive");
}

// The labeled source pool the partition draws from. For IDX data the held-out
// test set comes from the separate test files, so only train files load here.
inline Dataset build_source_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
    if (cfg.dataset.source == "synthetic")
        return generate_synthetic(cfg.dataset.classes, cfg.dataset.dim, cfg.dataset.per_class,
                                  cfg.dataset.separation, derive_seed(seed, "dataset"));
    return load_idx(cfg.dataset.images, cfg.dataset.labels);
}

inline FederationData build_federation_data(const ExperimentConfig& cfg, std::size_t k,
                                            std::uint64_t seed) {
    Dataset source = build_source_dataset(cfg, seed);
    PartitionSpec spec = cfg.partition;
    spec.classes_per_client = k;
    spec.seed = seed;
    if (cfg.dataset.source == "idx") {
        Dataset test = load_idx(cfg.dataset.test_images, cfg.dataset.test_labels);
        return partition(source, spec, &test);
    }
    return partition(source, spec);
}

inline std::string cell_name(const std::string& strategy, std::size_t k, std::uint64_t seed) {
    return strategy + "_k" + std::to_string(k) + "_seed" + std::to_string(seed);
}

// Runs the full cartesian sweep strategy x k x seed, one report per cell.
// Cells continue after failures; the exit status is 0 only if every cell
// completed. Combined summary.csv and curves.csv land in out_dir.
inline int run_experiment(const ExperimentConfig& cfg, std::ostream& log = std::cout) {
    validate(cfg);
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + cfg.out_dir + ": " + ec.message());

    std::vector<ExperimentReport> reports;
    int status = 0;
    for (std::size_t k : cfg.k_values) {
        for (std::uint64_t seed : cfg.seeds) {
            FederationData data;
            double reference_accuracy = 0.0;
            try {
                data = build_federation_data(cfg, k, seed);
                FederationConfig ref_cfg = cfg.federation;
                ref_cfg.seed = seed;
                reference_accuracy = train_reference(data, ref_cfg);
            } catch (const std::exception& e) {
                log << "[fedlogit] data setup failed for k=" << k << " seed=" << seed << ": "
                    << e.what() << "\n";
                status = 1;
                continue;
            }
            for (const auto& strategy : cfg.strategies) {
                const std::string cell = cell_name(strategy, k, seed);
                try {
                    FederationConfig fc = cfg.federation;
                    fc.strategy = strategy_from_string(strategy);
                    fc.seed = seed;
                    FederationResult result = run_federation(data, fc);

                    nlohmann::ordered_json echo = config_to_json(cfg);
                    echo["cell"] = {{"strategy", strategy}, {"k", k}, {"seed", seed}};
                    ExperimentReport report =
                        make_report(std::move(echo), strategy, k, cfg.partition.clients, seed,
                                    std::move(result.rounds), reference_accuracy,
                                    cfg.convergence_threshold);
                    emit_report(report, fs::path(cfg.out_dir) / cell);
                    log << "[fedlogit] " << cell << ": final=" << report.final_mean_accuracy
                        << " reference=" << report.reference_accuracy
                        << " convergence_round=" << report.convergence_round << "\n";
                    reports.push_back(std::move(report));
                } catch (const std::exception& e) {
                    log << "[fedlogit] cell " << cell << " failed: " << e.what() << "\n";
                    status = 1;
                }
            }
        }
    }
    write_summary_csv(reports, fs::path(cfg.out_dir) / "summary.csv");
    write_curves_csv(reports, fs::path(cfg.out_dir) / "curves.csv");
    return status;
}

}  // namespace fedlogit
