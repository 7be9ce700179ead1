#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace mlr {

/// Worker cap: MLR_THREADS if set, otherwise hardware concurrency.
inline int max_threads() {
    if (const char* env = std::getenv("MLR_THREADS")) {
        int v = std::atoi(env);
        if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(chunk_index, begin, end) over a fixed chunk grid. The grid depends
/// only on (total, chunk_size), never on the thread count, so per-chunk results
/// merged in chunk order are identical for any number of workers.
inline void parallel_chunks(std::int64_t total, std::int64_t chunk_size, int threads,
                            const std::function<void(std::int64_t, std::int64_t, std::int64_t)>& fn) {
    if (total <= 0) return;
    if (chunk_size <= 0) chunk_size = total;
    const std::int64_t n_chunks = (total + chunk_size - 1) / chunk_size;
    const int workers = static_cast<int>(std::min<std::int64_t>(std::max(threads, 1), n_chunks));

    if (workers == 1) {
        for (std::int64_t c = 0; c < n_chunks; ++c) {
            std::int64_t begin = c * chunk_size;
            fn(c, begin, std::min(begin + chunk_size, total));
        }
        return;
    }

    std::atomic<std::int64_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;
    auto run = [&] {
        for (;;) {
            std::int64_t c = next.fetch_add(1);
            if (c >= n_chunks) return;
            std::int64_t begin = c * chunk_size;
            try {
                fn(c, begin, std::min(begin + chunk_size, total));
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) pool.emplace_back(run);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace mlr
