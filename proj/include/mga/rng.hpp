#pragma once

#include <cstdint>
#include <random>

namespace mga {

// Seeded generator with hand-rolled draw helpers so that sampled values do not
// depend on the standard library's distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0,1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(eng_() % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Derive an independent stream; mixing constant keeps child seeds spread out.
    Rng fork(std::uint64_t salt) {
        return Rng(eng_() ^ (salt * 0x9e3779b97f4a7c15ULL));
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace mga
