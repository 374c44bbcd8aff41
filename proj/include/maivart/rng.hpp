#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "maivart/common.hpp"

namespace maivart {

// Combines a base seed with stream identifiers (epoch, batch, ...) so every
// stochastic step of a run is a pure function of (seed, position). Resuming
// a run from a checkpoint replays the exact same streams without having to
// persist a consumed generator.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (a + 1) + 0xbf58476d1ce4e5b9ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Deterministic random source. Avoids std::*_distribution on purpose: their
// output is implementation-defined, while mt19937_64 itself and the
// transforms below are pinned bit-for-bit.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller. Both variates are computed and one is
    // discarded, so no state beyond the engine survives a call.
    double normal() {
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::size_t below(std::size_t n) {
        return n == 0 ? 0 : static_cast<std::size_t>(engine_() % n);
    }

    std::string state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void set_state(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
        if (!is) throw ContractError("invalid RNG state string");
    }

private:
    std::mt19937_64 engine_;
};

// Fisher-Yates with our own index draws; std::shuffle consumption order is
// implementation-defined.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = rng.below(i);
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace maivart
