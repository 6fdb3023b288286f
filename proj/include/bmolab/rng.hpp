#ifndef BMOLAB_RNG_HPP
#define BMOLAB_RNG_HPP

#include <cstdint>
#include <random>

namespace bmo {

// SplitMix64 step; used to derive independent streams from (seed, index)
// so results never depend on evaluation order or worker count.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
    return std::mt19937_64(splitmix64(seed ^ splitmix64(stream)));
}

}  // namespace bmo

#endif
