#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedlogit/aggregation.hpp"
#include "fedlogit/data.hpp"
#include "fedlogit/errors.hpp"
#include "fedlogit/nn.hpp"
#include "fedlogit/rng.hpp"

namespace fedlogit {

enum class MetaRefresh { Once, EveryRound };

inline std::string to_string(MetaRefresh r) {
    return r == MetaRefresh::Once ? "once" : "every-round";
}

inline MetaRefresh meta_refresh_from_string(const std::string& s) {
    if (s == "once") return MetaRefresh::Once;
    if (s == "every-round") return MetaRefresh::EveryRound;
    throw ConfigError("unknown meta_refresh mode: " + s + " (expected once or every-round)");
}

struct FederationConfig {
    int rounds = 10;
    // First-round schedule is heavier than subsequent rounds.
    int first_local_epochs = 10;
    int first_distill_epochs = 10;
    int local_epochs = 1;
    int distill_epochs = 1;
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    Strategy strategy = Strategy::Average;
    double temperature = 1.0;
    MetaRefresh meta_refresh = MetaRefresh::EveryRound;
    bool uwa_allow_missing = false;
    std::size_t hidden_width = 128;
    Activation activation = Activation::Relu;
    MetaTrainConfig meta_train;
    std::uint64_t seed = 0;
};

struct ClientState {
    int id = 0;
    Model model;
    AdamState optimizer;
    std::vector<int> class_set;
    // UWA only; refreshed after every local-training stage.
    std::optional<GaussianMixtureDensity> density;
};

struct RoundMetrics {
    int round = 0;
    std::vector<double> client_accuracy;
    double mean_accuracy = 0.0;
    std::uint64_t uplink_bytes = 0;           // M * |D_pub| * C * 8, logit-only traffic
    std::uint64_t weight_baseline_bytes = 0;  // parameter_count * 8 * M, for comparison
    double wall_seconds = 0.0;
};

// Clients plus the (lazily trained) meta aggregator; the unit of rollback.
struct FederationState {
    std::vector<ClientState> clients;
    std::optional<MetaAggregator> meta_aggregator;
};

struct FederationResult {
    std::vector<RoundMetrics> rounds;
    FederationState state;
};

namespace detail {

// Fraction of test rows whose argmax logit equals the label; argmax ties
// resolve to the lowest class index.
inline double accuracy(const Model& model, const Dataset& dataset) {
    if (!dataset.labeled()) throw InputError("accuracy: dataset is unlabeled");
    if (dataset.size() == 0) throw InputError("accuracy: empty dataset");
    Matrix logits = forward(model, dataset.features);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.rows; ++i)
        if (argmax_row(logits, i) == static_cast<std::size_t>(dataset.labels[i])) ++correct;
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

inline void train_on(Model& model, AdamState& opt, const Matrix& features, const Matrix& targets,
                     int epochs, const FederationConfig& cfg, std::uint64_t stream_seed) {
    Rng rng(stream_seed);
    train_epochs(model, features, targets, epochs, cfg.batch_size, opt, rng);
}

inline std::vector<LogitMatrix> logits_on(const std::vector<ClientState>& clients,
                                          const Matrix& features) {
    std::vector<LogitMatrix> out;
    out.reserve(clients.size());
    for (const auto& c : clients) out.push_back({c.id, forward(c.model, features)});
    return out;
}

}  // namespace detail

inline void validate_federation_config(const FederationConfig& cfg, const FederationData& data) {
    if (cfg.rounds < 1) throw ConfigError("federation: rounds must be >= 1");
    if (cfg.first_local_epochs < 0 || cfg.first_distill_epochs < 0 || cfg.local_epochs < 0 ||
        cfg.distill_epochs < 0)
        throw ConfigError("federation: epoch counts must be >= 0");
    if (cfg.batch_size == 0) throw ConfigError("federation: batch_size must be positive");
    if (!(cfg.temperature > 0.0)) throw ConfigError("federation: temperature must be positive");
    if (!(cfg.learning_rate >= 0.0)) throw ConfigError("federation: learning_rate must be >= 0");
    if (cfg.hidden_width == 0) throw ConfigError("federation: hidden_width must be positive");
    if (data.clients() == 0) throw ConfigError("federation: no clients in partition");
    if (data.public_set.size() == 0) throw ConfigError("federation: empty public set");
    if (!data.test_set.labeled() || data.test_set.size() == 0)
        throw ConfigError("federation: missing labeled test set");
    if (cfg.strategy == Strategy::Meta && (data.meta_set.size() == 0 || !data.meta_set.labeled()))
        throw ConfigError("federation: meta strategy requires a labeled meta set");
    if (cfg.strategy == Strategy::Uwa)
        for (const auto& v : data.validation_sets)
            if (v.size() == 0) throw ConfigError("federation: uwa requires validation sets");
}

inline std::vector<ClientState> init_clients(const FederationData& data,
                                             const FederationConfig& cfg) {
    std::vector<ClientState> clients;
    const std::size_t d = data.private_sets.front().dim();
    for (std::size_t i = 0; i < data.clients(); ++i) {
        ClientState c;
        c.id = static_cast<int>(i);
        Rng init_rng(derive_seed(cfg.seed, "client-init", c.id));
        c.model = make_mlp({d, cfg.hidden_width, data.num_classes}, cfg.activation, init_rng);
        c.optimizer = make_adam(c.model, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
        c.class_set = data.client_classes[i];
        clients.push_back(std::move(c));
    }
    return clients;
}

// One communication round: local training, density/aggregator refresh as the
// strategy requires, logit exchange on the public set, one aggregation, and
// distillation on the aggregated soft targets. Any failure rolls the state
// back to its pre-round snapshot before rethrowing.
inline RoundMetrics run_round(FederationState& state, const FederationData& data,
                              const FederationConfig& cfg, int round_index) {
    const auto t0 = std::chrono::steady_clock::now();
    const FederationState snapshot = state;
    const int local_epochs = round_index == 1 ? cfg.first_local_epochs : cfg.local_epochs;
    const int distill_epochs = round_index == 1 ? cfg.first_distill_epochs : cfg.distill_epochs;

    RoundMetrics metrics;
    metrics.round = round_index;
    try {
        // Stage 1: local training on private data. Per-client RNG streams are
        // derived from (seed, round, client), so execution order is irrelevant.
        for (auto& client : state.clients) {
            const Dataset& priv = data.private_sets[static_cast<std::size_t>(client.id)];
            Matrix targets = one_hot(priv.labels, data.num_classes);
            detail::train_on(client.model, client.optimizer, priv.features, targets, local_epochs,
                             cfg, derive_seed(cfg.seed, "local", round_index, client.id));
        }

        if (cfg.strategy == Strategy::Uwa) {
            for (auto& client : state.clients) {
                const Dataset& val = data.validation_sets[static_cast<std::size_t>(client.id)];
                Matrix val_logits = forward(client.model, val.features);
                client.density = fit_logit_density(val_logits, val.labels, client.class_set);
            }
        }

        if (cfg.strategy == Strategy::Meta) {
            const bool needs_training =
                !state.meta_aggregator.has_value() || cfg.meta_refresh == MetaRefresh::EveryRound;
            if (needs_training) {
                std::vector<LogitMatrix> meta_logits =
                    detail::logits_on(state.clients, data.meta_set.features);
                MetaTrainConfig mt = cfg.meta_train;
                mt.seed = derive_seed(cfg.seed, "meta", round_index);
                state.meta_aggregator =
                    train_meta_aggregator(meta_logits, data.meta_set.labels, data.num_classes, mt);
            }
        }

        // Stage 2: logit exchange on the public set, aggregated once.
        std::vector<LogitMatrix> public_logits =
            detail::logits_on(state.clients, data.public_set.features);

        AggregatedTargets targets = [&] {
            switch (cfg.strategy) {
                case Strategy::Average:
                    return average_logits(public_logits, cfg.temperature);
                case Strategy::Uwa: {
                    std::vector<GaussianMixtureDensity> densities;
                    for (const auto& client : state.clients) {
                        if (!client.density)
                            throw InputError("run_round: missing density for client " +
                                             std::to_string(client.id));
                        densities.push_back(*client.density);
                    }
                    UwaOptions options;
                    options.temperature = cfg.temperature;
                    options.expected_clients = state.clients.size();
                    options.allow_missing_clients = cfg.uwa_allow_missing;
                    return uwa_aggregate(public_logits, densities, options);
                }
                case Strategy::Meta:
                    return meta_aggregate(*state.meta_aggregator, public_logits, cfg.temperature);
            }
            throw ConfigError("run_round: unknown strategy");
        }();

        // Stage 3: distillation refinement on the aggregated soft targets.
        for (auto& client : state.clients)
            detail::train_on(client.model, client.optimizer, data.public_set.features,
                             targets.soft_labels, distill_epochs, cfg,
                             derive_seed(cfg.seed, "distill", round_index, client.id));
    } catch (...) {
        state = snapshot;
        throw;
    }

    for (const auto& client : state.clients)
        metrics.client_accuracy.push_back(detail::accuracy(client.model, data.test_set));
    double sum = 0.0;
    for (double a : metrics.client_accuracy) sum += a;
    metrics.mean_accuracy = sum / static_cast<double>(metrics.client_accuracy.size());
    metrics.uplink_bytes = static_cast<std::uint64_t>(state.clients.size()) *
                           data.public_set.size() * data.num_classes * 8;
    metrics.weight_baseline_bytes = static_cast<std::uint64_t>(
        state.clients.front().model.parameter_count() * 8 * state.clients.size());
    metrics.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return metrics;
}

inline FederationResult run_federation(const FederationData& data, const FederationConfig& cfg) {
    validate_federation_config(cfg, data);
    FederationResult result;
    result.state.clients = init_clients(data, cfg);
    for (int round = 1; round <= cfg.rounds; ++round)
        result.rounds.push_back(run_round(result.state, data, cfg, round));
    return result;
}

// Fully informed reference: one client-sized model trained on a class-covering
// pool matched to |private| + |public| samples, given the same total epoch
// budget a federated client receives across all rounds and stages.
inline double train_reference(const FederationData& data, const FederationConfig& cfg) {
    const Dataset& pool = data.reference_pool;
    if (pool.size() == 0 || !pool.labeled())
        throw ConfigError("train_reference: empty or unlabeled reference pool");
    std::vector<double> prior = label_prior(pool);
    for (std::size_t c = 0; c < prior.size(); ++c)
        if (prior[c] == 0.0)
            throw ConfigError("train_reference: reference pool missing class " + std::to_string(c));

    const int total_epochs = cfg.first_local_epochs + cfg.first_distill_epochs +
                             (cfg.rounds - 1) * (cfg.local_epochs + cfg.distill_epochs);
    Rng rng(derive_seed(cfg.seed, "reference"));
    Model model = make_mlp({pool.dim(), cfg.hidden_width, data.num_classes}, cfg.activation, rng);
    AdamState opt = make_adam(model, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
    Matrix targets = one_hot(pool.labels, data.num_classes);
    train_epochs(model, pool.features, targets, total_epochs, cfg.batch_size, opt, rng);
    return detail::accuracy(model, data.test_set);
}

}  // namespace fedlogit
