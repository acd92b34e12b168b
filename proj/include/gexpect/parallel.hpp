#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace gexpect {

namespace detail {

inline std::atomic<std::size_t>& thread_limit_storage()
{
    static std::atomic<std::size_t> limit{0};
    return limit;
}

} // namespace detail

/// Caps the worker count used by every parallel loop (0 = hardware concurrency).
inline void set_thread_limit(std::size_t k) { detail::thread_limit_storage().store(k); }

inline std::size_t thread_limit()
{
    const std::size_t k = detail::thread_limit_storage().load();
    if (k != 0) {
        return k;
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs task(i) for i in [0, n_tasks).  Tasks must write only to their own
/// output slot; callers reduce the slots in index order, which keeps results
/// independent of the worker count.
template <class Task>
void parallel_for(std::size_t n_tasks, Task&& task)
{
    const std::size_t workers = std::min(thread_limit(), n_tasks);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n_tasks; ++i) {
            task(i);
        }
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto body = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n_tasks) {
                return;
            }
            try {
                task(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
                next.store(n_tasks);
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) {
        pool.emplace_back(body);
    }
    body();
    for (auto& t : pool) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

} // namespace gexpect
