#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace bft {

// Worker count: BFT_THREADS env var if set, else hardware concurrency.
inline int max_threads() {
    static const int n = [] {
        if (const char* e = std::getenv("BFT_THREADS")) {
            const int v = std::atoi(e);
            if (v > 0) return v;
        }
        const unsigned hc = std::thread::hardware_concurrency();
        return hc == 0 ? 1 : static_cast<int>(hc);
    }();
    return n;
}

// Runs fn(i) for i in [0,n). Each call must write only to its own output
// slot; callers do any cross-index reduction afterwards in index order, so
// results stay bit-identical regardless of the worker count.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
    const int workers = std::min(max_threads(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr err;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= n || failed.load()) break;
                try {
                    fn(i);
                } catch (...) {
                    if (!failed.exchange(true)) err = std::current_exception();
                    break;
                }
            }
        });
    for (std::thread& t : pool) t.join();
    if (failed.load()) std::rethrow_exception(err);
}

}  // namespace bft
