#include "glyphsr/rng.hpp"

#include <cmath>
#include <numbers>

namespace glyphsr {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t hash_keys(std::initializer_list<std::uint64_t> keys) {
    std::uint64_t h = 0x6a09e667f3bcc909ULL;
    for (std::uint64_t k : keys) h = splitmix64(h ^ splitmix64(k));
    return h;
}

std::uint64_t KeyedRng::next_u64() { return splitmix64(key_ ^ splitmix64(counter_++)); }

double KeyedRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

int KeyedRng::uniform_int(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(static_cast<std::int64_t>(hi) - lo + 1);
    return lo + static_cast<int>(next_u64() % span);
}

double KeyedRng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

}  // namespace glyphsr
