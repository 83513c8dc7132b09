// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace cadrads {

// Deterministic RNG with named sub-streams. mt19937_64 has a fully
// specified sequence, and all distributions below are hand-rolled, so
// results are identical across compilers and standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    // Derive an independent stream from a parent seed and a label, e.g.
    // Rng(sub_seed(seed, "augment", epoch, i)).
    static std::uint64_t sub_seed(std::uint64_t seed, std::string_view name,
                                  std::uint64_t a = 0, std::uint64_t b = 0) {
        std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
        auto mix = [&h](std::uint64_t x) {
            for (int i = 0; i < 8; ++i) {
                h ^= (x >> (8 * i)) & 0xff;
                h *= 0x100000001b3ull;
            }
        };
        for (char c : name) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ull;
        }
        mix(seed);
        mix(a);
        mix(b);
        // splitmix64 finalizer
        h ^= h >> 30;
        h *= 0xbf58476d1ce4e5b9ull;
        h ^= h >> 27;
        h *= 0x94d049bb133111ebull;
        h ^= h >> 31;
        return h;
    }

    // Sub-streams derive from the construction seed, never from stream
    // position, so they are independent of draw order on the parent.
    Rng sub(std::string_view name, std::uint64_t a = 0, std::uint64_t b = 0) const {
        return Rng(sub_seed(seed_, name, a, b));
    }

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0,1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t index(std::uint64_t n) {
        // Rejection sampling keeps the draw unbiased.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller, one value per call (the pair's second half is discarded
    // to keep the stream position independent of call parity).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Normal(0, stddev) resampled until |x| <= 2*stddev.
    double truncated_normal(double stddev) {
        double x = normal() * stddev;
        while (std::abs(x) > 2.0 * stddev) x = normal() * stddev;
        return x;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace cadrads
