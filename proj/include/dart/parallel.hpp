#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace dart {

// Runs fn(i) for i in [0, n) across the requested worker count. Each index
// must write only its own output slot, so results never depend on
// scheduling and any thread count produces identical output.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, const Fn& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (std::thread& t : pool) t.join();
}

}  // namespace dart
