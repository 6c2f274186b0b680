#ifndef FGLOC_RNG_HPP
#define FGLOC_RNG_HPP

#include <cstdint>
#include <random>

namespace fgloc {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent stream seeds so that
/// per-sample / per-epoch generators never share state.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng& rng, double mean = 0.0, double sigma = 1.0) {
    return std::normal_distribution<double>(mean, sigma)(rng);
}

inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

}  // namespace fgloc

#endif  // FGLOC_RNG_HPP
