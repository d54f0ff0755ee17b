#pragma once

#include <cstdint>
#include <random>

namespace derain {

// Engine output is fixed by the standard; the conversions below are spelled
// out so that draws do not depend on the library's distribution internals.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) { return n == 0 ? 0 : rng() % n; }

}  // namespace derain
