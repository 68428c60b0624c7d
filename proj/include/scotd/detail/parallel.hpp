#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

namespace scotd::detail {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Every index runs even if some throw;
// the returned vector holds the exception (or null) per index.
template <typename Fn>
std::vector<std::exception_ptr> parallel_for_collect(std::size_t n, std::size_t workers, Fn&& fn) {
    if (n == 0) return {};
    workers = std::clamp<std::size_t>(workers, 1, n);
    std::vector<std::exception_ptr> errors(n);
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
    }
    return errors;
}

// As parallel_for_collect, rethrowing the exception of the lowest failing index.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
    for (auto& e : parallel_for_collect(n, workers, std::forward<Fn>(fn))) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace scotd::detail
