#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace iee {

/// splitmix64 mixing step: a cheap, well-dispersed 64-bit permutation
/// used to derive independent child seeds from a master seed.
[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// FNV-1a hash of a stream name, so differently named random streams
/// derived from the same master seed are decorrelated.
[[nodiscard]] constexpr std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : text) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Deterministic child seed for (master seed, replication index, stream
/// name). Each replication of each named stream gets its own seed, so
/// estimator comparisons can share identical data per replication while
/// covariate and noise draws stay independent.
[[nodiscard]] constexpr std::uint64_t child_seed(std::uint64_t master, std::uint64_t replication,
                                                 std::string_view stream) {
    return splitmix64(splitmix64(master ^ fnv1a(stream)) + replication);
}

/// Engine seeded by the child-seed scheme.
[[nodiscard]] inline std::mt19937_64 make_engine(std::uint64_t master,
                                                 std::uint64_t replication,
                                                 std::string_view stream) {
    return std::mt19937_64(child_seed(master, replication, stream));
}

}  // namespace iee
