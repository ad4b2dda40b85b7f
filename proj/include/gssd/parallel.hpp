#pragma once

#include <cstdint>
#include <functional>

namespace gssd {

// Worker count resolution order: explicit set_worker_count() (CLI flag),
// GSSD_THREADS environment variable, hardware concurrency.
int worker_count();
void set_worker_count(int n);  // n <= 0 restores the default

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks, one per
// worker. Every output element must be owned by exactly one i so results are
// identical for any worker count.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

// Chunked variant: fn(begin, end) per worker chunk.
void parallel_for_chunks(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace gssd
