#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "fedlogit/binary_io.hpp"
#include "fedlogit/errors.hpp"
#include "fedlogit/matrix.hpp"
#include "fedlogit/nn.hpp"
#include "fedlogit/numeric.hpp"
#include "fedlogit/rng.hpp"

namespace fedlogit {

enum class Strategy { Average, Uwa, Meta };

inline std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::Average: return "average";
        case Strategy::Uwa: return "uwa";
        case Strategy::Meta: return "meta";
    }
    return "average";
}

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "average") return Strategy::Average;
    if (s == "uwa") return Strategy::Uwa;
    if (s == "meta") return Strategy::Meta;
    throw ConfigError("unknown strategy: " + s + " (expected average, uwa or meta)");
}

// One client's logits on the shared public set; the unit of communication.
struct LogitMatrix {
    int client_id = 0;
    Matrix values;  // |D_pub| x C
};

// Per-client diagonal-covariance mixture over logit space, one component per
// local class, uniform component weights.
struct GaussianMixtureDensity {
    std::vector<int> component_classes;
    Matrix means;      // K x C
    Matrix variances;  // K x C, floored

    std::size_t components() const { return component_classes.size(); }
    std::size_t logit_dim() const { return means.cols; }
};

inline constexpr double kVarianceFloor = 1e-6;

// Aggregated logits plus the distillation soft labels derived from them.
struct AggregatedTargets {
    Matrix values;       // n x C aggregated logits (or aggregator scores)
    Matrix soft_labels;  // softmax(values / temperature)
    Strategy strategy = Strategy::Average;
};

namespace detail {

inline AggregatedTargets make_targets(Matrix values, Strategy strategy, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    AggregatedTargets out;
    out.strategy = strategy;
    if (temperature == 1.0) {
        out.soft_labels = softmax(values);
    } else {
        Matrix scaled = values;
        for (double& v : scaled.data) v /= temperature;
        out.soft_labels = softmax(scaled);
    }
    out.values = std::move(values);
    return out;
}

inline void check_common_shape(std::span<const LogitMatrix> logits, const char* context) {
    if (logits.empty()) throw InputError(std::string(context) + ": no client logits given");
    for (const auto& lm : logits) {
        if (!lm.values.same_shape(logits.front().values))
            throw InputError(std::string(context) + ": client logit shapes disagree");
        require_finite(lm.values, context);
    }
}

}  // namespace detail

// Plain mean of the client logits, z(x) = (1/M) sum_i f_i(x).
inline AggregatedTargets average_logits(std::span<const LogitMatrix> logits,
                                        double temperature = 1.0) {
    detail::check_common_shape(logits, "average_logits");
    const auto& first = logits.front().values;
    Matrix mean(first.rows, first.cols);
    for (const auto& lm : logits)
        for (std::size_t i = 0; i < mean.data.size(); ++i) mean.data[i] += lm.values.data[i];
    const double inv_m = 1.0 / static_cast<double>(logits.size());
    for (double& v : mean.data) v *= inv_m;
    return detail::make_targets(std::move(mean), Strategy::Average, temperature);
}

// Closed-form per-class moment fit of the logit mixture: labels identify the
// component for every validation sample, so no EM is needed. Variances are
// unbiased (n-1) and floored at kVarianceFloor per dimension.
inline GaussianMixtureDensity fit_logit_density(const Matrix& validation_logits,
                                                std::span<const int> validation_labels,
                                                std::span<const int> class_set) {
    if (validation_logits.rows != validation_labels.size())
        throw InputError("fit_logit_density: logit rows do not match label count");
    if (class_set.empty()) throw InputError("fit_logit_density: empty class set");
    require_finite(validation_logits, "fit_logit_density input");

    const std::size_t C = validation_logits.cols;
    const std::size_t K = class_set.size();
    std::vector<std::vector<std::size_t>> members(K);
    for (std::size_t i = 0; i < validation_labels.size(); ++i) {
        auto it = std::find(class_set.begin(), class_set.end(), validation_labels[i]);
        if (it == class_set.end())
            throw InputError("fit_logit_density: label " + std::to_string(validation_labels[i]) +
                             " outside the client class set");
        members[static_cast<std::size_t>(it - class_set.begin())].push_back(i);
    }

    GaussianMixtureDensity density;
    density.component_classes.assign(class_set.begin(), class_set.end());
    density.means = Matrix(K, C);
    density.variances = Matrix(K, C);
    for (std::size_t k = 0; k < K; ++k) {
        const auto& rows = members[k];
        if (rows.size() < 2)
            throw FitError("fit_logit_density: class " + std::to_string(class_set[k]) + " has " +
                           std::to_string(rows.size()) + " validation samples, need at least 2");
        for (std::size_t r : rows)
            for (std::size_t d = 0; d < C; ++d) density.means(k, d) += validation_logits(r, d);
        for (std::size_t d = 0; d < C; ++d) density.means(k, d) /= static_cast<double>(rows.size());
        for (std::size_t r : rows)
            for (std::size_t d = 0; d < C; ++d) {
                double diff = validation_logits(r, d) - density.means(k, d);
                density.variances(k, d) += diff * diff;
            }
        for (std::size_t d = 0; d < C; ++d)
            density.variances(k, d) =
                std::max(density.variances(k, d) / static_cast<double>(rows.size() - 1), kVarianceFloor);
    }
    return density;
}

// Mixture log-density of one logit vector, computed entirely in log space:
// logsumexp over components of the diagonal-Gaussian log form, minus log K
// for the uniform component weights.
inline double confidence_score(const GaussianMixtureDensity& density,
                               std::span<const double> logit_row) {
    const std::size_t C = density.logit_dim();
    if (logit_row.size() != C) throw InputError("confidence_score: logit dimension mismatch");
    for (double v : logit_row)
        if (!std::isfinite(v)) throw InputError("confidence_score: non-finite logit");

    constexpr double kLogTwoPi = 1.8378770664093454836;
    std::vector<double> component_log(density.components());
    for (std::size_t k = 0; k < density.components(); ++k) {
        double log_det_half = 0.0;
        double quad = 0.0;
        for (std::size_t d = 0; d < C; ++d) {
            const double var = density.variances(k, d);
            const double diff = logit_row[d] - density.means(k, d);
            log_det_half += std::log(var);
            quad += diff * diff / var;
        }
        component_log[k] =
            -0.5 * static_cast<double>(C) * kLogTwoPi - 0.5 * log_det_half - 0.5 * quad;
    }
    return log_sum_exp(component_log) - std::log(static_cast<double>(density.components()));
}

// Confidence scores for every public sample under every client's own density:
// entry (x, i) is l_i(x) evaluated on client i's logits.
inline Matrix compute_confidences(std::span<const LogitMatrix> logits,
                                  std::span<const GaussianMixtureDensity> densities) {
    detail::check_common_shape(logits, "compute_confidences");
    if (densities.size() != logits.size())
        throw InputError("compute_confidences: missing density (need one per client)");
    const std::size_t n = logits.front().values.rows;
    Matrix confidences(n, logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i)
        for (std::size_t x = 0; x < n; ++x)
            confidences(x, i) = confidence_score(densities[i], logits[i].values.row(x));
    return confidences;
}

// Per-sample client weights: softmax over clients of the confidence scores,
// stabilized by max subtraction. Rows sum to 1 and every weight is positive.
inline Matrix uwa_weights(const Matrix& confidences) {
    Matrix weights(confidences.rows, confidences.cols);
    for (std::size_t x = 0; x < confidences.rows; ++x) {
        auto row = confidences.row(x);
        double max_v = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (std::size_t i = 0; i < confidences.cols; ++i) {
            double e = std::exp(confidences(x, i) - max_v);
            weights(x, i) = e;
            sum += e;
        }
        for (std::size_t i = 0; i < confidences.cols; ++i) weights(x, i) /= sum;
    }
    return weights;
}

// Confidence-weighted average z(x) = sum_i w_i(x) f_i(x) for precomputed
// confidence scores. Split out from uwa_aggregate so the uniform-confidence
// reduction can be exercised directly.
inline AggregatedTargets uwa_from_confidences(std::span<const LogitMatrix> logits,
                                              const Matrix& confidences, double temperature = 1.0) {
    detail::check_common_shape(logits, "uwa_from_confidences");
    const std::size_t n = logits.front().values.rows;
    const std::size_t C = logits.front().values.cols;
    if (confidences.rows != n || confidences.cols != logits.size())
        throw InputError("uwa_from_confidences: confidence matrix shape mismatch");

    Matrix weights = uwa_weights(confidences);
    Matrix combined(n, C);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const Matrix& f = logits[i].values;
        for (std::size_t x = 0; x < n; ++x) {
            const double w = weights(x, i);
            for (std::size_t d = 0; d < C; ++d) combined(x, d) += w * f(x, d);
        }
    }
    return detail::make_targets(std::move(combined), Strategy::Uwa, temperature);
}

struct UwaOptions {
    double temperature = 1.0;
    // When expected_clients > 0 and fewer logit sets are present, aggregation
    // either fails (default) or renormalizes over the present clients.
    std::size_t expected_clients = 0;
    bool allow_missing_clients = false;
};

inline AggregatedTargets uwa_aggregate(std::span<const LogitMatrix> logits,
                                       std::span<const GaussianMixtureDensity> densities,
                                       const UwaOptions& options = {}) {
    if (options.expected_clients > 0 && logits.size() != options.expected_clients &&
        !options.allow_missing_clients)
        throw InputError("uwa_aggregate: expected " + std::to_string(options.expected_clients) +
                         " clients, got " + std::to_string(logits.size()) +
                         " (set allow_missing_clients to renormalize over present clients)");
    Matrix confidences = compute_confidences(logits, densities);
    return uwa_from_confidences(logits, confidences, options.temperature);
}

// Concatenated per-client logit blocks h(x) = [f_1(x), ..., f_M(x)] in the
// given client order.
inline Matrix build_meta_features(std::span<const LogitMatrix> logits,
                                  std::span<const int> client_order) {
    detail::check_common_shape(logits, "build_meta_features");
    if (client_order.size() != logits.size())
        throw InputError("build_meta_features: client order lists " +
                         std::to_string(client_order.size()) + " clients, got " +
                         std::to_string(logits.size()) + " logit sets");
    const std::size_t n = logits.front().values.rows;
    const std::size_t C = logits.front().values.cols;
    Matrix features(n, logits.size() * C);
    for (std::size_t slot = 0; slot < client_order.size(); ++slot) {
        const LogitMatrix* found = nullptr;
        for (const auto& lm : logits)
            if (lm.client_id == client_order[slot]) {
                found = &lm;
                break;
            }
        if (found == nullptr)
            throw InputError("build_meta_features: no logits for client " +
                             std::to_string(client_order[slot]));
        for (std::size_t x = 0; x < n; ++x)
            for (std::size_t d = 0; d < C; ++d) features(x, slot * C + d) = found->values(x, d);
    }
    return features;
}

// Learned aggregator A: R^(M*C) -> R^C with the client ordering baked in;
// changing the client set requires retraining.
struct MetaAggregator {
    Model model;
    std::vector<int> client_order;

    std::size_t clients() const { return client_order.size(); }
};

struct MetaTrainConfig {
    std::size_t hidden = 64;
    int epochs = 50;
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
};

inline MetaAggregator train_meta_aggregator(std::span<const LogitMatrix> meta_logits,
                                            std::span<const int> meta_labels,
                                            std::size_t num_classes,
                                            const MetaTrainConfig& config) {
    if (meta_logits.empty() || meta_labels.empty())
        throw ConfigError("train_meta_aggregator: empty meta set");
    detail::check_common_shape(meta_logits, "train_meta_aggregator");
    if (meta_logits.front().values.rows != meta_labels.size())
        throw InputError("train_meta_aggregator: logit rows do not match label count");
    if (meta_logits.front().values.cols != num_classes)
        throw ConfigError("train_meta_aggregator: logit width does not match class count");

    MetaAggregator agg;
    for (const auto& lm : meta_logits) agg.client_order.push_back(lm.client_id);
    std::sort(agg.client_order.begin(), agg.client_order.end());

    Matrix features = build_meta_features(meta_logits, agg.client_order);
    Matrix targets = one_hot(meta_labels, num_classes);

    Rng rng(derive_seed(config.seed, "meta-aggregator"));
    agg.model = make_mlp({features.cols, config.hidden, num_classes}, Activation::Relu, rng);
    AdamState opt = make_adam(agg.model, config.learning_rate);
    train_epochs(agg.model, features, targets, config.epochs, config.batch_size, opt, rng);
    return agg;
}

inline AggregatedTargets meta_aggregate(const MetaAggregator& agg,
                                        std::span<const LogitMatrix> logits,
                                        double temperature = 1.0) {
    detail::check_common_shape(logits, "meta_aggregate");
    if (logits.size() != agg.clients())
        throw ConfigError("meta_aggregate: aggregator was trained for " +
                          std::to_string(agg.clients()) + " clients but got " +
                          std::to_string(logits.size()) +
                          "; the aggregator must be retrained when clients are added or removed");
    Matrix features = build_meta_features(logits, agg.client_order);
    Matrix scores = forward(agg.model, features);
    return detail::make_targets(std::move(scores), Strategy::Meta, temperature);
}

// --- binary and CSV dumps ---------------------------------------------------

// Logit dump "FDL1": client id, n, C, then row-major little-endian f64.
inline void save_logits(const LogitMatrix& lm, const std::string& path) {
    auto out = io::open_output(path);
    io::write_magic(out, "FDL1");
    io::write_u32(out, static_cast<std::uint32_t>(lm.client_id));
    io::write_u64(out, lm.values.rows);
    io::write_u64(out, lm.values.cols);
    for (double v : lm.values.data) io::write_f64(out, v);
    if (!out) throw IoError("write failed: " + path);
}

inline LogitMatrix load_logits(const std::string& path) {
    auto in = io::open_input(path);
    io::expect_magic(in, "FDL1", "logit dump");
    LogitMatrix lm;
    lm.client_id = static_cast<int>(io::read_u32(in, "logit dump client id"));
    std::uint64_t rows = io::read_u64(in, "logit dump rows");
    std::uint64_t cols = io::read_u64(in, "logit dump cols");
    lm.values = Matrix(rows, cols);
    for (double& v : lm.values.data) v = io::read_f64(in, "logit dump payload");
    return lm;
}

inline void write_logits_csv(const LogitMatrix& lm, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "# client_id=" << lm.client_id << " rows=" << lm.values.rows
        << " cols=" << lm.values.cols << "\n";
    char buf[64];
    for (std::size_t i = 0; i < lm.values.rows; ++i) {
        for (std::size_t j = 0; j < lm.values.cols; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", lm.values(i, j));
            out << (j ? "," : "") << buf;
        }
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

// Density dump "FDG1": K, C, component class ids, means, variances.
inline void save_density(const GaussianMixtureDensity& density, const std::string& path) {
    auto out = io::open_output(path);
    io::write_magic(out, "FDG1");
    io::write_u64(out, density.components());
    io::write_u64(out, density.logit_dim());
    for (int c : density.component_classes) io::write_u32(out, static_cast<std::uint32_t>(c));
    for (double v : density.means.data) io::write_f64(out, v);
    for (double v : density.variances.data) io::write_f64(out, v);
    if (!out) throw IoError("write failed: " + path);
}

inline GaussianMixtureDensity load_density(const std::string& path) {
    auto in = io::open_input(path);
    io::expect_magic(in, "FDG1", "density dump");
    std::uint64_t k = io::read_u64(in, "density components");
    std::uint64_t c = io::read_u64(in, "density dimension");
    GaussianMixtureDensity density;
    density.component_classes.resize(k);
    for (auto& cls : density.component_classes)
        cls = static_cast<int>(io::read_u32(in, "density class ids"));
    density.means = Matrix(k, c);
    density.variances = Matrix(k, c);
    for (double& v : density.means.data) v = io::read_f64(in, "density means");
    for (double& v : density.variances.data) v = io::read_f64(in, "density variances");
    return density;
}

// Aggregator dump "FDA1": client ordering, then an embedded model checkpoint.
inline void save_meta_aggregator(const MetaAggregator& agg, const std::string& path) {
    auto out = io::open_output(path);
    io::write_magic(out, "FDA1");
    io::write_u64(out, agg.client_order.size());
    for (int id : agg.client_order) io::write_u32(out, static_cast<std::uint32_t>(id));
    save_model_stream(agg.model, out);
    if (!out) throw IoError("write failed: " + path);
}

inline MetaAggregator load_meta_aggregator(const std::string& path) {
    auto in = io::open_input(path);
    io::expect_magic(in, "FDA1", "aggregator dump");
    MetaAggregator agg;
    std::uint64_t m = io::read_u64(in, "aggregator client count");
    agg.client_order.resize(m);
    for (auto& id : agg.client_order) id = static_cast<int>(io::read_u32(in, "aggregator client ids"));
    agg.model = load_model_stream(in);
    return agg;
}

}  // namespace fedlogit
