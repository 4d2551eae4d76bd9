#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace ctxmeta {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent seeds from (seed, stream) pairs.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return mix64(seed ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) { return Rng(derive_seed(seed, stream)); }

/// Order-sensitive hash of a vector of doubles (bit patterns, FNV-1a folded through mix64).
std::uint64_t content_hash(std::span<const double> values);

// Named streams so that different consumers of one seed never overlap.
namespace stream {
inline constexpr std::uint64_t model_init = 1;
inline constexpr std::uint64_t train_episodes = 2;
inline constexpr std::uint64_t validation = 3;
inline constexpr std::uint64_t evaluation = 4;
inline constexpr std::uint64_t warmup = 5;
inline constexpr std::uint64_t palette = 6;
inline constexpr std::uint64_t export_tasks = 7;
}  // namespace stream

}  // namespace ctxmeta
