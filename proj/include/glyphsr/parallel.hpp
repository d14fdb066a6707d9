#pragma once

#include <cstddef>
#include <functional>

namespace glyphsr {

// Worker cap: TEXTSR_THREADS if set and positive, otherwise hardware concurrency.
int worker_count();

// Runs body(i) for i in [0, n). Iterations must be independent; results are written
// by index so output order never depends on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace glyphsr
