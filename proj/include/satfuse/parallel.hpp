#pragma once

#include <cstddef>
#include <functional>

namespace satfuse {

// Worker cap: SATFUSE_THREADS if set (>=1), else hardware concurrency.
int max_threads();

// Runs fn(i) for i in [0, n). Work is split into contiguous blocks over at
// most `threads` std::threads. fn must only write to slots owned by its
// index; under that contract results do not depend on the thread count.
// Exceptions thrown by fn are captured and rethrown on the caller thread.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

} // namespace satfuse
