#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace qforest {

inline int hardware_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

/// Splits [0, n) into at most num_threads contiguous chunks and runs
/// fn(chunk_index, begin, end) on one worker thread per chunk. The caller reduces the
/// per-chunk results in chunk order, which keeps floating-point reductions
/// deterministic for a fixed thread count.
inline void parallel_chunks(std::size_t n, int num_threads,
                            const std::function<void(int, std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    std::size_t chunks = static_cast<std::size_t>(num_threads < 1 ? 1 : num_threads);
    if (chunks > n) chunks = n;
    if (chunks == 1) {
        fn(0, 0, n);
        return;
    }
    const std::size_t base = n / chunks;
    const std::size_t extra = n % chunks;
    std::vector<std::thread> workers;
    workers.reserve(chunks);
    std::size_t begin = 0;
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t len = base + (c < extra ? 1 : 0);
        workers.emplace_back(fn, static_cast<int>(c), begin, begin + len);
        begin += len;
    }
    for (auto& t : workers) t.join();
}

}  // namespace qforest
