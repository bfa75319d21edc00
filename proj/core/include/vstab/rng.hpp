#pragma once

#include <cstdint>
#include <random>

namespace vstab {

/// Seedable generator used everywhere randomness appears.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The distributions are implemented here rather than taken from
/// <random> because the standard leaves their algorithms unspecified:
///   - uniform():      top 53 bits of one draw, scaled to [0, 1)
///   - uniform_int():  rejection sampling on the smallest covering power of two
///   - normal():       Box-Muller on two uniform() draws, spare value cached
/// With these choices a seed reproduces the same stream on any conforming
/// standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    double uniform();
    /// Inclusive on both ends.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    double normal();
    double normal(double mean, double sigma) { return mean + sigma * normal(); }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// splitmix64 finalizer over (seed, stream); derives independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace vstab
