#pragma once

#include <cstddef>
#include <functional>

namespace dcl {

// Worker count from DCL_THREADS (default: hardware concurrency, at least 1).
int thread_count();

// Runs body(i) for i in [0, n). Iterations must be independent; results are
// identical for any thread count.
void parallel_for(size_t n, const std::function<void(size_t)>& body);

} // namespace dcl
