#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "fedlogit/errors.hpp"

namespace fedlogit {

namespace detail {

// splitmix64 finalizer; also used as the seed mixer.
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::uint64_t hash_tag(std::string_view tag) {
    std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return h;
}

inline std::uint64_t seed_combine(std::uint64_t h, std::uint64_t v) {
    return mix64(h ^ (v + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2)));
}

}  // namespace detail

// Deterministic, portable RNG (splitmix64 stream + hand-rolled distributions).
// Distributions are implemented here rather than via <random> so that results
// do not depend on the standard library version.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        return detail::mix64(state_);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.141592653589793238462643 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Unbiased integer in [0, n).
    std::uint64_t next_index(std::uint64_t n) {
        if (n == 0) throw InputError("Rng::next_index: n must be positive");
        std::uint64_t x, r;
        do {
            x = next_u64();
            r = x % n;
        } while (x - r > std::uint64_t(0) - n);
        return r;
    }

    // Fisher-Yates shuffle.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

namespace detail {

inline std::uint64_t seed_part(std::uint64_t v) { return v; }
inline std::uint64_t seed_part(int v) { return static_cast<std::uint64_t>(v); }
inline std::uint64_t seed_part(std::string_view tag) { return hash_tag(tag); }

}  // namespace detail

// Derives an independent RNG stream from a base seed plus context tags,
// e.g. derive_seed(seed, "local", round, client_id). Streams for distinct
// contexts are decorrelated, so concurrent and serial execution of clients
// produce identical results.
template <class... Parts>
std::uint64_t derive_seed(std::uint64_t base, Parts... parts) {
    std::uint64_t h = detail::mix64(base ^ 0xA0761FC5A4B6D3E9ull);
    ((h = detail::seed_combine(h, detail::seed_part(parts))), ...);
    return h;
}

}  // namespace fedlogit
