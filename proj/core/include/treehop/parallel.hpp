#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>

namespace treehop {

// Worker cap from TREEHOP_THREADS (0 or unset = hardware concurrency).
std::size_t thread_count();

// Runs fn(i) for i in [0, n) over up to thread_count() threads using static
// contiguous partitions. Callers must write results into per-index slots; any
// reduction happens afterwards in index order so output never depends on the
// thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

using Rng = std::mt19937_64;

// SplitMix64 finalizer; combines a base seed with stream tags into an
// independent seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

// 53-bit uniform in [0, 1). Unlike std::uniform_real_distribution the result
// does not depend on the standard library.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace treehop
