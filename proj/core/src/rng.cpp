#include "trajlab/rng.hpp"

#include "trajlab/errors.hpp"

#include <cmath>
#include <numbers>

namespace trajlab {

namespace {

uint64_t splitmix64(uint64_t& x) {
    x += 0x9E3779B97F4A7C15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

} // namespace

Rng::Rng(uint64_t seed) {
    seed_origin_ = seed;
    uint64_t sm = seed;
    for (auto& w : s_) {
        w = splitmix64(sm);
    }
}

uint64_t Rng::next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

uint64_t Rng::next_below(uint64_t n) {
    if (n == 0) {
        throw ValueError("Rng::next_below: n must be positive");
    }
    // Rejection sampling over the largest multiple of n that fits in 64 bits.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = next_u64();
    while (x >= limit) {
        x = next_u64();
    }
    return x % n;
}

double Rng::next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_normal() {
    // Box-Muller. u clamped away from zero so log stays finite.
    double u = next_unit();
    double v = next_unit();
    if (u <= 0.0) {
        u = 0x1.0p-53;
    }
    return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * v);
}

Rng Rng::split(uint64_t salt) const {
    uint64_t mix = seed_origin_;
    (void)splitmix64(mix);
    // Fold the salt through a second splitmix pass so that nearby salts give
    // unrelated streams.
    uint64_t x = seed_origin_ ^ (0xA0761D6478BD642FULL * (salt + 1));
    return Rng(splitmix64(x));
}

void Rng::state(uint64_t out[4]) const {
    for (int i = 0; i < 4; ++i) {
        out[i] = s_[i];
    }
}

Rng Rng::from_state(const uint64_t s[4]) {
    Rng r;
    for (int i = 0; i < 4; ++i) {
        r.s_[i] = s[i];
    }
    return r;
}

} // namespace trajlab
