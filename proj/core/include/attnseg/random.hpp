#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace attnseg {

/// SplitMix64 generator. Output is fully specified, so seeded streams
/// (initialization, shuffles, splits) replay identically across platforms.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

    std::uint64_t next() noexcept {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) from the top 53 bits.
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, bound) by modulo reduction.
    std::uint64_t below(std::uint64_t bound) noexcept { return bound == 0 ? 0 : next() % bound; }

    /// Standard normal via Box-Muller (one draw per call, second value discarded).
    double normal() noexcept;

private:
    std::uint64_t state_;
};

/// Fisher-Yates shuffle driven by SplitMix64::below, highest index first.
template <class Item>
void deterministic_shuffle(std::vector<Item>& items, SplitMix64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace attnseg
