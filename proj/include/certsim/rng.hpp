#pragma once

#include <cstdint>
#include <string>

namespace certsim {

// Deterministic random stream. Uses xoshiro256** seeded through splitmix64,
// with hand-rolled uniform/normal transforms so that results are identical
// across standard library implementations. Substreams derived via fork()
// make per-sample randomness independent of processing order.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();

    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);

    // Standard normal via Box-Muller; caches the spare deviate.
    double normal();

    // Uniform index in [0, n).
    size_t index(size_t n);

    // Independent stream keyed by an arbitrary 64-bit tag.
    Rng fork(uint64_t stream) const;
    Rng fork(const std::string& stream) const;

private:
    uint64_t state_[4];
    uint64_t seed_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// FNV-1a, used to hash sample ids into stream tags.
uint64_t hash64(const std::string& s);

} // namespace certsim
