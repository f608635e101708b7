#include "oodbench/rng.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <unordered_set>

namespace oodbench {

namespace {
__extension__ using u128 = unsigned __int128;
}

double Rng::normal() noexcept {
    // 1 - u keeps the logarithm argument in (0, 1].
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) noexcept {
    if (n <= 1) {
        return 0;
    }
    // Lemire's multiply-shift with rejection.
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
        const std::uint64_t x = (*this)();
        const u128 m = static_cast<u128>(x) * n;
        if (static_cast<std::uint64_t>(m) >= threshold) {
            return static_cast<std::uint64_t>(m >> 64);
        }
    }
}

Vector Rng::normal_vector(Index n) noexcept {
    Vector out(n);
    for (Index i = 0; i < n; ++i) {
        out[i] = normal();
    }
    return out;
}

std::vector<Index> Rng::permutation(Index n) noexcept {
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    for (Index i = n - 1; i > 0; --i) {
        const auto j = static_cast<Index>(below(static_cast<std::uint64_t>(i) + 1));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    return order;
}

std::vector<Index> Rng::choose(Index n, Index count) {
    require(count >= 0 && count <= n, "choose: count out of range");
    if (count * 4 > n) {
        auto order = permutation(n);
        order.resize(static_cast<std::size_t>(count));
        return order;
    }
    std::vector<Index> picked;
    picked.reserve(static_cast<std::size_t>(count));
    std::unordered_set<Index> seen;
    while (static_cast<Index>(picked.size()) < count) {
        const auto candidate = static_cast<Index>(below(static_cast<std::uint64_t>(n)));
        if (seen.insert(candidate).second) {
            picked.push_back(candidate);
        }
    }
    return picked;
}

namespace {

std::uint64_t fnv1a(std::string_view text) noexcept {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (const char c : text) {
        hash ^= static_cast<unsigned char>(c);
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::string_view> tags) noexcept {
    std::uint64_t key = Rng::mix(master ^ 0x6a09e667f3bcc908ULL);
    for (const auto tag : tags) {
        key = Rng::mix(key ^ fnv1a(tag));
    }
    return key;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index) noexcept {
    return Rng::mix(derive_seed(master, {tag}) ^ Rng::mix(index + 1));
}

}  // namespace oodbench
