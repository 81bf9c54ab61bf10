#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace dni {

/// Worker count. DNI_THREADS caps it; 0 or unset means one worker per core.
inline int thread_count() {
    static const int n = [] {
        long v = 0;
        if (const char* env = std::getenv("DNI_THREADS")) {
            v = std::strtol(env, nullptr, 10);
        }
        if (v > 0) return static_cast<int>(v);
        unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(hw);
    }();
    return n;
}

namespace detail {
inline bool& in_parallel_region() {
    thread_local bool flag = false;
    return flag;
}
} // namespace detail

/// Runs fn(0..n-1), possibly concurrently. Each index is executed exactly once;
/// results are independent of the worker count as long as fn(i) writes only
/// state owned by index i. Nested calls run serially. The first exception thrown
/// by any fn(i) is rethrown on the caller's thread.
template <typename F>
void parallel_for(std::size_t n, F&& fn) {
    const int workers = thread_count();
    if (n == 0) return;
    if (workers <= 1 || n == 1 || detail::in_parallel_region()) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const int nt = static_cast<int>(std::min<std::size_t>(workers, n));
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::atomic<bool> failed{false};
    auto body = [&] {
        detail::in_parallel_region() = true;
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
            if (failed.load(std::memory_order_relaxed)) break;
            try {
                fn(i);
            } catch (...) {
                if (!failed.exchange(true)) first_error = std::current_exception();
                break;
            }
        }
        detail::in_parallel_region() = false;
    };
    std::vector<std::thread> pool;
    pool.reserve(nt - 1);
    for (int t = 1; t < nt; ++t) pool.emplace_back(body);
    body();
    for (auto& th : pool) th.join();
    if (failed.load()) std::rethrow_exception(first_error);
}

} // namespace dni
