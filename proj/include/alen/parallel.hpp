#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace alen {

/// Worker cap: ALEN_THREADS if set and positive, else the hardware concurrency.
inline std::size_t worker_count() {
    static const std::size_t count = [] {
        if (const char* env = std::getenv("ALEN_THREADS")) {
            try {
                long v = std::stol(env);
                if (v > 0) return static_cast<std::size_t>(v);
            } catch (...) {
            }
        }
        return std::max<std::size_t>(1, std::thread::hardware_concurrency());
    }();
    return count;
}

/// Runs body(i) for i in [0, n). Work is split into contiguous chunks; each index
/// is handled by exactly one worker, so kernels that own disjoint outputs per
/// index stay bitwise deterministic regardless of the worker count.
/// `cost` is a rough per-index operation count used to skip threading for tiny jobs.
template <typename Body>
void parallel_for(std::size_t n, std::size_t cost, Body&& body) {
    constexpr std::size_t min_work = 1u << 16;
    std::size_t workers = std::min(worker_count(), n);
    if (workers > 1 && n * cost < min_work * 2) workers = 1;
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 1; w < workers; ++w) {
        std::size_t lo = w * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            for (std::size_t i = lo; i < hi; ++i) body(i);
        });
    }
    for (std::size_t i = 0; i < std::min(n, chunk); ++i) body(i);
}

} // namespace alen
