#pragma once

#include <cstdint>
#include <cstdlib>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace topoland {

// Error taxonomy. The CLI maps these onto process exit codes:
// usage/config -> 2, data/io -> 3, numeric abort -> 4.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thread cap for internal parallelism (fold-level jobs). Reproducibility is
// independent of this value: parallel units are fully isolated and merged in
// a fixed order.
inline int thread_budget() {
    const char* env = std::getenv("TOPOLAND_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    return n < 1 ? 1 : n;
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Named substreams derived from one master seed. Each component of the
// pipeline (fold split, batch sampling, augmentation, selection, init, ...)
// owns its own stream, so toggling one component never perturbs another's
// draws.
enum class Stream : std::uint64_t {
    FoldSplit = 1,
    Init = 2,
    BatchSampling = 3,
    Augmentation = 4,
    Selection = 5,
    Generator = 6,
};

// mt19937_64 raw output is fully specified by the standard; all distribution
// math below is hand-rolled so sequences do not depend on the standard
// library implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    static Rng derive(std::uint64_t master, Stream stream, std::uint64_t salt = 0) {
        std::uint64_t s = master;
        std::uint64_t a = splitmix64(s);
        s ^= static_cast<std::uint64_t>(stream) * 0x9e3779b97f4a7c15ULL;
        std::uint64_t b = splitmix64(s);
        s ^= salt + 0x632be59bd9b4e019ULL;
        std::uint64_t c = splitmix64(s);
        return Rng(a ^ (b << 1) ^ c);
    }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::size_t uniform_index(std::size_t n) {
        return static_cast<std::size_t>(uniform() * static_cast<double>(n));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; one cached value so draws come in deterministic pairs.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double std) { return mean + std * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace topoland
