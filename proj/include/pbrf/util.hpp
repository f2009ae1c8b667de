#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace pbrf {

/// Shortest round-trip decimal form; identical bits always give identical text.
std::string format_double(double value);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64_mix(std::uint64_t state, std::uint64_t value);
std::string hex64(std::uint64_t value);

/// Runs body(i) for i in [0, count) on up to `jobs` threads. Each index is
/// processed exactly once; callers write into per-index slots so the result
/// does not depend on scheduling. The first exception (lowest index) is
/// rethrown after all workers finish.
void parallel_for(int jobs, int count, const std::function<void(int)>& body);

}  // namespace pbrf
