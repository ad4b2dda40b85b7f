#include "gssd/parallel.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>

namespace gssd {

namespace {
std::atomic<int> g_workers{0};

int default_workers() {
    if (const char* env = std::getenv("GSSD_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}
}  // namespace

int worker_count() {
    int n = g_workers.load(std::memory_order_relaxed);
    return n >= 1 ? n : default_workers();
}

void set_worker_count(int n) { g_workers.store(n, std::memory_order_relaxed); }

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
    if (n <= 0) return;
    int workers = static_cast<int>(std::min<int64_t>(worker_count(), n));
    if (workers <= 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
#pragma omp parallel for num_threads(workers) schedule(static)
    for (int64_t i = 0; i < n; ++i) fn(i);
}

void parallel_for_chunks(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    int64_t workers = std::min<int64_t>(worker_count(), n);
    if (workers <= 1) {
        fn(0, n);
        return;
    }
    int64_t chunk = (n + workers - 1) / workers;
#pragma omp parallel num_threads(static_cast<int>(workers))
    {
        int64_t t = omp_get_thread_num();
        int64_t begin = t * chunk;
        int64_t end = std::min(n, begin + chunk);
        if (begin < end) fn(begin, end);
    }
}

}  // namespace gssd
