#pragma once

#include <cstdint>
#include <vector>

namespace trajlab {

// Deterministic xoshiro256** generator. We avoid <random> distributions on
// purpose: their output sequences are implementation-defined, and every
// stochastic choice in this project must be reproducible bit-for-bit from a
// seed, on any platform. Substreams derived via split() are independent and
// stable, which lets parallel workers (seeds, permutation rounds) draw from
// non-overlapping deterministic streams.
class Rng {
  public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();
    // Uniform in [0, n), unbiased via rejection. n must be > 0.
    uint64_t next_below(uint64_t n);
    // Uniform in [0, 1) with 53 random bits.
    double next_unit();
    // Standard normal via Box-Muller; draws two uniforms per call so the
    // generator state needs no cached spare.
    double next_normal();

    // Independent deterministic substream identified by a salt.
    Rng split(uint64_t salt) const;

    // Fisher-Yates shuffle driven by this generator.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Raw state accessors for serialization.
    void state(uint64_t out[4]) const;
    static Rng from_state(const uint64_t s[4]);

  private:
    Rng() = default;
    uint64_t s_[4] = {0, 0, 0, 0};
    uint64_t seed_origin_ = 0;
};

} // namespace trajlab
