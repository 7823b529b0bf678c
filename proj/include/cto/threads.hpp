#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace cto {

// Worker count for data-parallel loops inside ops. Defaults to the hardware
// count, capped; CTO_THREADS overrides; deterministic mode pins it to one.
// Parallel loops split disjoint output ranges, so results are bitwise
// identical for any worker count.
inline int& thread_count() {
    static int n = [] {
        if (const char* env = std::getenv("CTO_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return std::min(v, 64);
        }
        unsigned hw = std::thread::hardware_concurrency();
        return static_cast<int>(std::clamp(hw, 1u, 8u));
    }();
    return n;
}

inline void set_thread_count(int n) { thread_count() = std::max(1, n); }

// Runs fn(begin, end) over [0, n) split across workers. Falls back to the
// calling thread for small ranges or single-worker configs.
inline void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn,
                         std::int64_t grain = 1) {
    int workers = thread_count();
    if (workers <= 1 || n <= grain) {
        fn(0, n);
        return;
    }
    std::int64_t chunks = std::min<std::int64_t>(workers, (n + grain - 1) / grain);
    std::int64_t per = (n + chunks - 1) / chunks;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(chunks));
    for (std::int64_t c = 0; c < chunks; ++c) {
        std::int64_t b = c * per, e = std::min(n, b + per);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    for (auto& t : pool) t.join();
}

} // namespace cto
