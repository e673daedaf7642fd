#pragma once

#include <cstdint>
#include <random>

namespace amirl {

using Rng = std::mt19937_64;

/// Independent random streams used across the pipeline.
enum class Stream : std::uint64_t {
    imputation = 1,
    bootstrap = 2,
    candidates_initial = 3,
    candidates_stability = 4,
    interval = 5,
    generator = 6,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Counter-based seed derivation: the result depends only on the arguments,
/// never on the order in which jobs are scheduled.
constexpr std::uint64_t derive_seed(std::uint64_t base, Stream stream, std::uint64_t a = 0,
                                    std::uint64_t b = 0) noexcept
{
    std::uint64_t h = splitmix64(base ^ 0xA5A5A5A5A5A5A5A5ULL);
    h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
    h = splitmix64(h ^ (a + 0x632BE59BD9B4E019ULL));
    h = splitmix64(h ^ (b + 0x8CB92BA72F3D8DD7ULL));
    return h;
}

inline Rng make_rng(std::uint64_t base, Stream stream, std::uint64_t a = 0, std::uint64_t b = 0)
{
    return Rng(derive_seed(base, stream, a, b));
}

} // namespace amirl
