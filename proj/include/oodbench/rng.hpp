#pragma once

#include "oodbench/core.hpp"

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <string_view>
#include <vector>

namespace oodbench {

/// Counter-based generator: the n-th output is a pure function of (key, n).
///
/// Satisfies UniformRandomBitGenerator so the standard distributions can draw
/// from it. Two generators with the same key produce identical streams no
/// matter which thread owns them.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t key) noexcept : key_(key) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept { return mix(key_ + kGolden * ++counter_); }

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

    /// Uniform in [0, 1).
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Standard normal (Box-Muller; one output per call, no cached state).
    double normal() noexcept;
    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept;

    Vector normal_vector(Index n) noexcept;

    /// Fisher-Yates permutation of [0, n).
    std::vector<Index> permutation(Index n) noexcept;

    /// `count` distinct indices from [0, n), in draw order.
    std::vector<Index> choose(Index n, Index count);

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/// Sub-stream key derived from a master seed and a list of string tags,
/// e.g. derive_seed(seed, {"circle", "train"}).
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::string_view> tags) noexcept;
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index) noexcept;

}  // namespace oodbench
