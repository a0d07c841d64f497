#include "doctest.h"

#include <cmath>

#include "fedlogit/federation.hpp"
#include "fedlogit/reporting.hpp"

using namespace fedlogit;

namespace {

FederationData small_fixture(std::size_t clients, std::size_t k, std::uint64_t seed,
                             std::size_t classes = 4, std::size_t private_size = 160) {
    Dataset source = generate_synthetic(classes, 8, 150, 8.0, derive_seed(seed, "fixture"));
    PartitionSpec spec;
    spec.clients = clients;
    spec.classes_per_client = k;
    spec.private_size = private_size;
    spec.public_size = 40;
    spec.meta_size = 40;
    spec.test_size = 80;
    spec.seed = seed;
    return partition(source, spec);
}

FederationConfig small_config(Strategy strategy, std::uint64_t seed) {
    FederationConfig cfg;
    cfg.rounds = 2;
    cfg.first_local_epochs = 2;
    cfg.first_distill_epochs = 2;
    cfg.local_epochs = 1;
    cfg.distill_epochs = 1;
    cfg.batch_size = 32;
    cfg.hidden_width = 16;
    cfg.strategy = strategy;
    cfg.seed = seed;
    return cfg;
}

bool params_equal(const Model& a, const Model& b) {
    for (std::size_t l = 0; l < a.weights.size(); ++l)
        if (a.weights[l].data != b.weights[l].data || a.biases[l].data != b.biases[l].data)
            return false;
    return true;
}

}  // namespace

TEST_CASE("run_round: zero-epoch round leaves models unchanged but reports metrics") {
    FederationData data = small_fixture(2, 2, 1);
    FederationConfig cfg = small_config(Strategy::Average, 1);
    cfg.first_local_epochs = 0;
    cfg.first_distill_epochs = 0;
    FederationState state;
    state.clients = init_clients(data, cfg);
    std::vector<Model> before;
    for (const auto& c : state.clients) before.push_back(c.model);

    RoundMetrics metrics = run_round(state, data, cfg, 1);
    for (std::size_t i = 0; i < state.clients.size(); ++i)
        CHECK(params_equal(state.clients[i].model, before[i]));
    CHECK(metrics.client_accuracy.size() == 2);
    CHECK(metrics.uplink_bytes == 2ull * 40 * 4 * 8);
    CHECK(metrics.mean_accuracy ==
          doctest::Approx((metrics.client_accuracy[0] + metrics.client_accuracy[1]) / 2.0));
}

TEST_CASE("run_federation: single client reduces to local training plus self-distillation") {
    FederationData data = small_fixture(1, 4, 2);
    for (Strategy strategy : {Strategy::Average, Strategy::Uwa}) {
        FederationConfig cfg = small_config(strategy, 2);
        FederationResult result = run_federation(data, cfg);
        CHECK(result.rounds.size() == 2);
        CHECK(result.rounds.back().client_accuracy.size() == 1);
        CHECK(result.rounds.back().uplink_bytes == 1ull * 40 * 4 * 8);
    }

    // With averaging, one round is exactly local training followed by
    // self-distillation on the client's own softened logits.
    FederationConfig cfg = small_config(Strategy::Average, 2);
    cfg.rounds = 1;
    FederationResult engine = run_federation(data, cfg);

    std::vector<ClientState> manual = init_clients(data, cfg);
    Model model = manual[0].model;
    AdamState opt = manual[0].optimizer;
    Matrix targets = one_hot(data.private_sets[0].labels, data.num_classes);
    Rng local_rng(derive_seed(cfg.seed, "local", 1, 0));
    train_epochs(model, data.private_sets[0].features, targets, cfg.first_local_epochs,
                 cfg.batch_size, opt, local_rng);
    Matrix own_soft = softmax(forward(model, data.public_set.features));
    Rng distill_rng(derive_seed(cfg.seed, "distill", 1, 0));
    train_epochs(model, data.public_set.features, own_soft, cfg.first_distill_epochs,
                 cfg.batch_size, opt, distill_rng);
    CHECK(params_equal(engine.state.clients[0].model, model));
}

TEST_CASE("run_round: aggregation failure rolls client models back") {
    FederationData data = small_fixture(2, 2, 3);
    FederationConfig cfg = small_config(Strategy::Meta, 3);
    cfg.meta_refresh = MetaRefresh::Once;
    FederationState state;
    state.clients = init_clients(data, cfg);

    // Pre-seed an aggregator trained for three clients; with refresh=once it is
    // reused as-is and must fail against the two-client federation.
    Rng rng(9);
    MetaAggregator stale;
    stale.client_order = {0, 1, 2};
    stale.model = make_mlp({3 * 4, 8, 4}, Activation::Relu, rng);
    state.meta_aggregator = stale;

    std::vector<Model> before;
    for (const auto& c : state.clients) before.push_back(c.model);
    CHECK_THROWS_AS(run_round(state, data, cfg, 1), ConfigError);
    REQUIRE(state.clients.size() == 2);
    for (std::size_t i = 0; i < state.clients.size(); ++i)
        CHECK(params_equal(state.clients[i].model, before[i]));
}

TEST_CASE("run_federation: identical seeds give identical metric sequences") {
    FederationData data = small_fixture(3, 2, 4);
    for (Strategy strategy : {Strategy::Average, Strategy::Uwa, Strategy::Meta}) {
        FederationConfig cfg = small_config(strategy, 11);
        FederationResult a = run_federation(data, cfg);
        FederationResult b = run_federation(data, cfg);
        REQUIRE(a.rounds.size() == b.rounds.size());
        for (std::size_t r = 0; r < a.rounds.size(); ++r) {
            CHECK(a.rounds[r].client_accuracy == b.rounds[r].client_accuracy);
            CHECK(a.rounds[r].mean_accuracy == b.rounds[r].mean_accuracy);
        }
        for (std::size_t i = 0; i < a.state.clients.size(); ++i)
            CHECK(params_equal(a.state.clients[i].model, b.state.clients[i].model));
    }
}

TEST_CASE("run_federation: knowledge transfers across disjoint client classes") {
    // Two clients with disjoint class pairs; under averaging the distillation
    // stage is each client's only source of the other pair.
    FederationData data = small_fixture(2, 2, 5, 4, 200);
    FederationConfig cfg = small_config(Strategy::Average, 5);
    cfg.rounds = 5;
    cfg.first_local_epochs = 10;
    cfg.first_distill_epochs = 30;
    cfg.distill_epochs = 3;
    cfg.hidden_width = 32;
    FederationResult result = run_federation(data, cfg);

    CHECK(result.rounds.back().mean_accuracy > result.rounds.front().mean_accuracy);

    for (std::size_t i = 0; i < 2; ++i) {
        const auto& own = data.client_classes[i];
        const Model& model = result.state.clients[i].model;
        Matrix logits = forward(model, data.test_set.features);
        std::size_t foreign_total = 0, foreign_correct = 0;
        for (std::size_t x = 0; x < data.test_set.size(); ++x) {
            int y = data.test_set.labels[x];
            if (std::find(own.begin(), own.end(), y) != own.end()) continue;
            ++foreign_total;
            if (argmax_row(logits, x) == static_cast<std::size_t>(y)) ++foreign_correct;
        }
        REQUIRE(foreign_total > 0);
        double foreign_accuracy =
            static_cast<double>(foreign_correct) / static_cast<double>(foreign_total);
        CHECK(foreign_accuracy > 0.25);
    }
}

TEST_CASE("run_federation: uplink accounting is exact every round") {
    FederationData data = small_fixture(3, 2, 6);
    FederationConfig cfg = small_config(Strategy::Uwa, 6);
    FederationResult result = run_federation(data, cfg);
    const std::uint64_t params = result.state.clients.front().model.parameter_count();
    for (const auto& round : result.rounds) {
        CHECK(round.uplink_bytes == 3ull * 40 * 4 * 8);
        CHECK(round.weight_baseline_bytes == params * 8 * 3);
    }
}

TEST_CASE("train_reference: strong on separable data, fails without class coverage") {
    FederationData data = small_fixture(2, 2, 7);
    FederationConfig cfg = small_config(Strategy::Average, 7);
    cfg.rounds = 3;
    cfg.first_local_epochs = 10;
    cfg.first_distill_epochs = 10;
    double accuracy = train_reference(data, cfg);
    CHECK(accuracy > 0.9);

    FederationData broken = data;
    for (auto& y : broken.reference_pool.labels) y = 0;
    CHECK_THROWS_AS(train_reference(broken, cfg), ConfigError);
}

TEST_CASE("run_federation: configuration errors surface before round 1") {
    FederationData data = small_fixture(2, 2, 8);
    FederationConfig bad_rounds = small_config(Strategy::Average, 8);
    bad_rounds.rounds = 0;
    CHECK_THROWS_AS(run_federation(data, bad_rounds), ConfigError);

    FederationData no_meta = data;
    no_meta.meta_set = Dataset{};
    FederationConfig meta_cfg = small_config(Strategy::Meta, 8);
    CHECK_THROWS_AS(run_federation(no_meta, meta_cfg), ConfigError);

    FederationConfig bad_temperature = small_config(Strategy::Average, 8);
    bad_temperature.temperature = 0.0;
    CHECK_THROWS_AS(run_federation(data, bad_temperature), ConfigError);
}

TEST_CASE("run_federation: meta refresh modes both complete and differ in retraining") {
    FederationData data = small_fixture(2, 2, 9);
    FederationConfig once = small_config(Strategy::Meta, 9);
    once.meta_refresh = MetaRefresh::Once;
    FederationConfig every = small_config(Strategy::Meta, 9);
    every.meta_refresh = MetaRefresh::EveryRound;
    FederationResult a = run_federation(data, once);
    FederationResult b = run_federation(data, every);
    CHECK(a.rounds.size() == 2);
    CHECK(b.rounds.size() == 2);
    REQUIRE(a.state.meta_aggregator.has_value());
    REQUIRE(b.state.meta_aggregator.has_value());
}
