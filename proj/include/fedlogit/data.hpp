#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedlogit/errors.hpp"
#include "fedlogit/matrix.hpp"
#include "fedlogit/rng.hpp"

namespace fedlogit {

// Labeled or unlabeled sample collection. labels is empty for unlabeled sets.
struct Dataset {
    Matrix features;          // n x d
    std::vector<int> labels;  // empty == unlabeled, else one id in [0, C) per row
    std::size_t num_classes = 0;

    std::size_t size() const { return features.rows; }
    std::size_t dim() const { return features.cols; }
    bool labeled() const { return !labels.empty(); }
};

inline void validate(const Dataset& d, const char* context) {
    if (d.labeled() && d.labels.size() != d.size())
        throw InputError(std::string(context) + ": label count does not match row count");
    for (int y : d.labels)
        if (y < 0 || static_cast<std::size_t>(y) >= d.num_classes)
            throw InputError(std::string(context) + ": label outside [0, C)");
    require_finite(d.features, context);
}

// Per-class empirical label frequencies, length C. Zero mass outside observed classes.
inline std::vector<double> label_prior(const Dataset& dataset) {
    if (!dataset.labeled()) throw InputError("label_prior: dataset is unlabeled");
    if (dataset.size() == 0) throw InputError("label_prior: empty dataset");
    std::vector<double> prior(dataset.num_classes, 0.0);
    for (int y : dataset.labels) prior[static_cast<std::size_t>(y)] += 1.0;
    for (double& p : prior) p /= static_cast<double>(dataset.size());
    return prior;
}

// Gaussian blobs with unit isotropic noise, one blob per class, labels attached.
// For dim >= classes the means sit on scaled coordinate axes at exact mutual
// distance `separation`; otherwise random means are rescaled so the minimum
// pairwise distance equals `separation`.
inline Dataset generate_synthetic(std::size_t classes, std::size_t dim, std::size_t per_class,
                                  double separation, std::uint64_t seed) {
    if (classes < 2) throw ConfigError("generate_synthetic: need at least 2 classes");
    if (dim < 1) throw ConfigError("generate_synthetic: need at least 1 dimension");
    Rng rng(derive_seed(seed, "synthetic"));

    Matrix means(classes, dim);
    if (dim >= classes) {
        const double scale = separation / std::sqrt(2.0);
        for (std::size_t c = 0; c < classes; ++c) means(c, c) = scale;
    } else {
        for (double& v : means.data) v = rng.normal();
        double min_dist = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < classes; ++a)
            for (std::size_t b = a + 1; b < classes; ++b) {
                double d2 = 0.0;
                for (std::size_t j = 0; j < dim; ++j) {
                    double diff = means(a, j) - means(b, j);
                    d2 += diff * diff;
                }
                min_dist = std::min(min_dist, std::sqrt(d2));
            }
        if (min_dist <= 0.0) throw ConfigError("generate_synthetic: degenerate mean placement");
        for (double& v : means.data) v *= separation / min_dist;
    }

    Dataset out;
    out.num_classes = classes;
    out.features = Matrix(classes * per_class, dim);
    out.labels.reserve(classes * per_class);
    std::size_t row = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t i = 0; i < per_class; ++i, ++row) {
            for (std::size_t j = 0; j < dim; ++j) out.features(row, j) = means(c, j) + rng.normal();
            out.labels.push_back(static_cast<int>(c));
        }
    }
    return out;
}

namespace detail {

inline std::uint32_t read_be_u32(std::istream& in, const std::string& path, std::size_t offset) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw FormatError(path + ": truncated at byte " + std::to_string(offset));
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

}  // namespace detail

// IDX container loader (big-endian headers, magic 0x803 for images and 0x801
// for labels). Pixels are scaled to [0, 1]; images flatten row-major.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw IoError("cannot open IDX images: " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw IoError("cannot open IDX labels: " + labels_path);

    std::uint32_t img_magic = detail::read_be_u32(img, images_path, 0);
    if (img_magic != 0x00000803u)
        throw FormatError(images_path + ": bad magic at byte 0 (expected 0x00000803)");
    std::uint32_t count = detail::read_be_u32(img, images_path, 4);
    std::uint32_t rows = detail::read_be_u32(img, images_path, 8);
    std::uint32_t cols = detail::read_be_u32(img, images_path, 12);

    std::uint32_t lab_magic = detail::read_be_u32(lab, labels_path, 0);
    if (lab_magic != 0x00000801u)
        throw FormatError(labels_path + ": bad magic at byte 0 (expected 0x00000801)");
    std::uint32_t lab_count = detail::read_be_u32(lab, labels_path, 4);
    if (lab_count != count)
        throw FormatError(labels_path + ": label count " + std::to_string(lab_count) +
                          " does not match image count " + std::to_string(count));

    const std::size_t d = std::size_t(rows) * cols;
    Dataset out;
    out.features = Matrix(count, d);
    out.labels.resize(count);

    std::vector<unsigned char> pixel_row(d);
    for (std::uint32_t i = 0; i < count; ++i) {
        if (!img.read(reinterpret_cast<char*>(pixel_row.data()), static_cast<std::streamsize>(d)))
            throw FormatError(images_path + ": truncated at byte " +
                              std::to_string(16 + std::size_t(i) * d));
        for (std::size_t j = 0; j < d; ++j)
            out.features(i, j) = static_cast<double>(pixel_row[j]) / 255.0;
    }
    std::vector<unsigned char> label_bytes(count);
    if (!lab.read(reinterpret_cast<char*>(label_bytes.data()), static_cast<std::streamsize>(count)))
        throw FormatError(labels_path + ": truncated at byte 8");

    int max_label = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        out.labels[i] = static_cast<int>(label_bytes[i]);
        max_label = std::max(max_label, out.labels[i]);
    }
    out.num_classes = static_cast<std::size_t>(max_label) + 1;
    return out;
}

// Label-shift partition parameters.
struct PartitionSpec {
    std::size_t clients = 5;
    std::size_t classes_per_client = 2;  // k
    std::size_t private_size = 1000;
    std::size_t public_size = 500;
    std::size_t meta_size = 300;
    std::size_t test_size = 1000;  // ignored when an explicit test set is supplied
    double validation_fraction = 0.1;
    std::uint64_t seed = 0;
};

inline void validate(const PartitionSpec& spec, std::size_t num_classes) {
    if (spec.clients < 1) throw ConfigError("partition: need at least one client");
    if (spec.classes_per_client < 1 || spec.classes_per_client > num_classes)
        throw ConfigError("partition: classes_per_client must be in [1, C]");
    if (spec.clients * spec.classes_per_client < num_classes)
        throw ConfigError("partition: clients * classes_per_client < C, cannot cover all classes");
    if (!(spec.validation_fraction > 0.0 && spec.validation_fraction < 1.0))
        throw ConfigError("partition: validation_fraction must be in (0, 1)");
    if (spec.public_size < num_classes)
        throw ConfigError("partition: public_size must be at least C to cover all classes");
    if (spec.private_size < 4 * spec.classes_per_client)
        throw ConfigError("partition: private_size too small for validation holdout");
}

// Everything the federation consumes: private/validation splits per client,
// the shared unlabeled public set, the labeled meta set, a held-out test set,
// and a class-covering labeled pool for the fully informed reference.
struct FederationData {
    std::vector<Dataset> private_sets;              // labeled, training portion
    std::vector<Dataset> validation_sets;           // labeled holdout per client
    std::vector<std::vector<int>> client_classes;   // C_i, sorted ascending
    Dataset public_set;                             // unlabeled
    std::vector<int> public_labels_hidden;          // evaluation only
    Dataset meta_set;                               // labeled, drawn from private pools
    Dataset test_set;                               // labeled
    Dataset reference_pool;                         // labeled, |private| + |public| samples
    std::size_t num_classes = 0;
    std::uint64_t seed = 0;

    // Source-row bookkeeping for provenance checks; indices refer to the
    // dataset the partition was built from.
    std::vector<std::vector<std::size_t>> private_source_indices;
    std::vector<std::vector<std::size_t>> validation_source_indices;
    std::vector<std::size_t> meta_source_indices;

    std::size_t clients() const { return private_sets.size(); }

    nlohmann::ordered_json manifest() const {
        nlohmann::ordered_json m;
        m["seed"] = seed;
        m["clients"] = clients();
        m["num_classes"] = num_classes;
        m["client_classes"] = client_classes;
        nlohmann::ordered_json sizes;
        std::vector<std::size_t> priv, val;
        for (const auto& d : private_sets) priv.push_back(d.size());
        for (const auto& d : validation_sets) val.push_back(d.size());
        sizes["private"] = priv;
        sizes["validation"] = val;
        sizes["public"] = public_set.size();
        sizes["meta"] = meta_set.size();
        sizes["test"] = test_set.size();
        sizes["reference_pool"] = reference_pool.size();
        m["sizes"] = sizes;
        return m;
    }
};

namespace detail {

inline Dataset subset(const Dataset& source, std::span<const std::size_t> indices, bool keep_labels) {
    Dataset out;
    out.num_classes = source.num_classes;
    out.features = gather_rows(source.features, indices);
    if (keep_labels) {
        out.labels.reserve(indices.size());
        for (std::size_t idx : indices) out.labels.push_back(source.labels[idx]);
    }
    return out;
}

// Uniform k-subsets of classes per client, then a repair pass that reassigns
// duplicated class slots until every class is covered. Any missing class is
// absent from all clients, so reassignment never breaks within-client
// distinctness.
inline std::vector<std::vector<int>> assign_client_classes(std::size_t clients, std::size_t k,
                                                           std::size_t num_classes, Rng& rng) {
    std::vector<int> all_classes(num_classes);
    std::iota(all_classes.begin(), all_classes.end(), 0);

    std::vector<std::vector<int>> sets(clients);
    for (auto& set : sets) {
        std::vector<int> pool = all_classes;
        rng.shuffle(pool);
        set.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    }

    auto class_counts = [&] {
        std::vector<int> counts(num_classes, 0);
        for (const auto& set : sets)
            for (int c : set) ++counts[static_cast<std::size_t>(c)];
        return counts;
    };

    std::vector<int> counts = class_counts();
    for (std::size_t missing = 0; missing < num_classes; ++missing) {
        if (counts[missing] > 0) continue;
        // Candidate slots hold a class that appears somewhere else too.
        std::vector<std::pair<std::size_t, std::size_t>> slots;
        for (std::size_t i = 0; i < clients; ++i)
            for (std::size_t s = 0; s < k; ++s)
                if (counts[static_cast<std::size_t>(sets[i][s])] > 1) slots.emplace_back(i, s);
        auto [i, s] = slots[static_cast<std::size_t>(rng.next_index(slots.size()))];
        --counts[static_cast<std::size_t>(sets[i][s])];
        sets[i][s] = static_cast<int>(missing);
        ++counts[missing];
    }
    for (auto& set : sets) std::sort(set.begin(), set.end());
    return sets;
}

}  // namespace detail

// Splits a labeled source dataset into the federation layout. Private draws
// are class-balanced over C_i and sampled with replacement, so client sets may
// overlap. A stratified validation holdout (at least 2 samples per local
// class) is carved from each private draw. When explicit_test is null a
// class-balanced test set is reserved from the source first and excluded from
// every sampling pool.
inline FederationData partition(const Dataset& source, const PartitionSpec& spec,
                                const Dataset* explicit_test = nullptr) {
    if (!source.labeled()) throw InputError("partition: source dataset must be labeled");
    validate(source, "partition source");
    const std::size_t C = source.num_classes;
    validate(spec, C);

    Rng rng(derive_seed(spec.seed, "partition"));
    FederationData out;
    out.num_classes = C;
    out.seed = spec.seed;

    std::vector<std::vector<std::size_t>> pools(C);
    for (std::size_t i = 0; i < source.size(); ++i)
        pools[static_cast<std::size_t>(source.labels[i])].push_back(i);
    for (auto& pool : pools) rng.shuffle(pool);

    if (explicit_test != nullptr) {
        if (!explicit_test->labeled()) throw InputError("partition: explicit test set must be labeled");
        if (explicit_test->num_classes != C || explicit_test->dim() != source.dim())
            throw ConfigError("partition: explicit test set shape does not match source");
        out.test_set = *explicit_test;
    } else {
        std::vector<std::size_t> test_indices;
        for (std::size_t c = 0; c < C; ++c) {
            std::size_t want = spec.test_size / C + (c < spec.test_size % C ? 1 : 0);
            if (pools[c].size() < want + 1)
                throw ConfigError("partition: class " + std::to_string(c) +
                                  " pool too small for test reservation");
            for (std::size_t i = 0; i < want; ++i) {
                test_indices.push_back(pools[c].back());
                pools[c].pop_back();
            }
        }
        rng.shuffle(test_indices);
        out.test_set = detail::subset(source, test_indices, true);
    }
    for (const auto& pool : pools)
        if (pool.empty()) throw ConfigError("partition: empty class pool after test reservation");

    out.client_classes = detail::assign_client_classes(spec.clients, spec.classes_per_client, C, rng);

    auto draw_from_class = [&](std::size_t c) {
        const auto& pool = pools[c];
        return pool[static_cast<std::size_t>(rng.next_index(pool.size()))];
    };

    for (std::size_t i = 0; i < spec.clients; ++i) {
        const auto& classes = out.client_classes[i];
        std::vector<std::size_t> train_idx, val_idx;
        for (std::size_t s = 0; s < classes.size(); ++s) {
            int c = classes[s];
            // Balanced per-class counts over C_i, remainder to the first classes.
            std::size_t n_c = spec.private_size / classes.size() +
                              (s < spec.private_size % classes.size() ? 1 : 0);
            std::vector<std::size_t> drawn;
            drawn.reserve(n_c);
            for (std::size_t n = 0; n < n_c; ++n)
                drawn.push_back(draw_from_class(static_cast<std::size_t>(c)));
            auto want = static_cast<std::size_t>(
                std::llround(spec.validation_fraction * static_cast<double>(n_c)));
            std::size_t val_n = std::max<std::size_t>(want, 2);
            if (val_n >= n_c)
                throw ConfigError("partition: class " + std::to_string(c) +
                                  " draw too small for validation holdout");
            rng.shuffle(drawn);
            val_idx.insert(val_idx.end(), drawn.begin(), drawn.begin() + static_cast<std::ptrdiff_t>(val_n));
            train_idx.insert(train_idx.end(), drawn.begin() + static_cast<std::ptrdiff_t>(val_n), drawn.end());
        }
        rng.shuffle(train_idx);
        rng.shuffle(val_idx);
        out.private_sets.push_back(detail::subset(source, train_idx, true));
        out.validation_sets.push_back(detail::subset(source, val_idx, true));
        out.private_source_indices.push_back(std::move(train_idx));
        out.validation_source_indices.push_back(std::move(val_idx));
    }

    // Public set: class-balanced draw over all C classes, labels stripped.
    std::vector<std::size_t> public_indices;
    for (std::size_t c = 0; c < C; ++c) {
        std::size_t want = spec.public_size / C + (c < spec.public_size % C ? 1 : 0);
        for (std::size_t i = 0; i < want; ++i) public_indices.push_back(draw_from_class(c));
    }
    rng.shuffle(public_indices);
    out.public_set = detail::subset(source, public_indices, false);
    out.public_labels_hidden.reserve(public_indices.size());
    for (std::size_t idx : public_indices) out.public_labels_hidden.push_back(source.labels[idx]);

    // Meta set: sampled without replacement from the union of private draws,
    // so it adds no information beyond what clients already hold.
    std::set<std::size_t> union_set;
    for (const auto& idxs : out.private_source_indices) union_set.insert(idxs.begin(), idxs.end());
    for (const auto& idxs : out.validation_source_indices) union_set.insert(idxs.begin(), idxs.end());
    std::vector<std::size_t> union_pool(union_set.begin(), union_set.end());
    if (union_pool.size() < spec.meta_size)
        throw ConfigError("partition: private pools too small for meta set of " +
                          std::to_string(spec.meta_size));
    rng.shuffle(union_pool);
    union_pool.resize(spec.meta_size);
    out.meta_set = detail::subset(source, union_pool, true);
    out.meta_source_indices = std::move(union_pool);

    // Reference pool: |private| + |public| class-balanced labeled samples.
    const std::size_t ref_size = spec.private_size + spec.public_size;
    std::vector<std::size_t> ref_indices;
    for (std::size_t c = 0; c < C; ++c) {
        std::size_t want = ref_size / C + (c < ref_size % C ? 1 : 0);
        for (std::size_t i = 0; i < want; ++i) ref_indices.push_back(draw_from_class(c));
    }
    rng.shuffle(ref_indices);
    out.reference_pool = detail::subset(source, ref_indices, true);
    return out;
}

}  // namespace fedlogit
