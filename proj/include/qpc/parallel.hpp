#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace qpc {

// Runs body(i) for i in [0, count). Results must be written to slots indexed by
// i so the outcome is independent of scheduling. Exceptions are collected and
// the first one (by item index) is rethrown after all workers join.
inline void parallel_for(int count, int jobs, const std::function<void(int)>& body) {
    if (count <= 0) return;
    if (jobs < 1) jobs = 1;
    int workers = std::min(jobs, count);
    if (workers == 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            for (;;) {
                int i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    body(i);
                } catch (...) {
                    errors[static_cast<std::size_t>(i)] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace qpc
