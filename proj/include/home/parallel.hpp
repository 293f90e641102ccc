#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace home {

/// Worker count: HOME_MOE_THREADS if set, else hardware concurrency.
std::size_t default_threads();

/// Runs fn(i) for i in [0, n) over up to `threads` workers. Each index runs
/// exactly once; callers write results into index-addressed slots so output
/// does not depend on scheduling. The first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t threads = 0);

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);
/// Order-sensitive combination used for per-trajectory RNG seeds.
std::uint64_t hash_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0);

}  // namespace home
