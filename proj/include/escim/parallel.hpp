#pragma once

#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace escim {

// Worker-thread cap: explicit argument, else ESCIM_THREADS, else hardware.
inline std::size_t resolve_threads(std::size_t requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("ESCIM_THREADS")) {
        const long v = std::atol(env);
        if (v > 0) return static_cast<std::size_t>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

// Runs fn(0..n_jobs-1) across up to max_threads workers. Jobs must not share
// mutable state; results should be written to per-job slots.
inline void parallel_for_jobs(std::size_t n_jobs, std::size_t max_threads,
                              const std::function<void(std::size_t)>& fn) {
    const std::size_t n_threads = std::min(resolve_threads(max_threads), n_jobs);
    if (n_threads <= 1) {
        for (std::size_t i = 0; i < n_jobs; ++i) fn(i);
        return;
    }
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) {
        workers.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n_jobs; i += n_threads) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace escim
