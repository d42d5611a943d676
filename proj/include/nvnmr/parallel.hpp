#pragma once

#include <cstddef>
#include <functional>

namespace nvnmr {

// Environment variable read for the worker cap.
inline constexpr const char* worker_env_var = "NVNMR_THREADS";

// Workers used by parallel_for: an explicit override if set, otherwise the
// requested count (or hardware concurrency) capped by NVNMR_THREADS. Always >= 1.
std::size_t worker_count();

// Command-line style override, not capped. 0 clears it.
void set_worker_override(std::size_t workers);

// Config-level request, still subject to the env cap. 0 clears it.
void set_worker_request(std::size_t workers);

// Runs body(i) for i in [0, n). Indices are claimed dynamically, so body must
// write its result by index. The first exception thrown is rethrown after
// all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace nvnmr
