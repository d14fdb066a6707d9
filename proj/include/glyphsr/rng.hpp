#pragma once

#include <cstdint>
#include <initializer_list>

namespace glyphsr {

std::uint64_t splitmix64(std::uint64_t x);

// Folds an ordered key list into one 64-bit value.
std::uint64_t hash_keys(std::initializer_list<std::uint64_t> keys);

// Counter-based stream: output i is a pure function of (key, i), so a stream keyed by
// (seed, sample, stage) yields the same numbers no matter which worker draws them.
class KeyedRng {
public:
    explicit KeyedRng(std::uint64_t key) : key_(key) {}
    KeyedRng(std::initializer_list<std::uint64_t> keys) : key_(hash_keys(keys)) {}

    std::uint64_t next_u64();
    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [lo, hi].
    int uniform_int(int lo, int hi);
    double normal();
    bool bernoulli(double p) { return uniform() < p; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace glyphsr
