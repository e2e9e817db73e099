#pragma once

#include <cstdint>
#include <random>

namespace icshunt::detail {

// Distribution helpers built directly on mt19937_64 output so seeded results
// do not depend on the standard library's distribution implementations.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::uint64_t below(Rng& rng, std::uint64_t bound) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t draw = rng();
    while (draw >= limit) draw = rng();
    return draw % bound;
}

template <typename Container>
void shuffle(Container& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(below(rng, i));
        using std::swap;
        swap(items[i - 1], items[j]);
    }
}

}  // namespace icshunt::detail
