#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mdfhp {

// Default worker count: MDFHP_THREADS if set and positive, else 1.
int default_threads();

// Runs body(k) for k in [0, n) on up to `threads` workers. Work items are
// handed out dynamically; the first exception thrown is rethrown.
template <class Body>
void parallel_for(std::size_t n, int threads, Body&& body) {
    const std::size_t workers = std::min<std::size_t>(n, threads < 1 ? 1 : static_cast<std::size_t>(threads));
    if (workers <= 1) {
        for (std::size_t k = 0; k < n; ++k) body(k);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto run = [&] {
        for (std::size_t k = next++; k < n; k = next++) {
            try {
                body(k);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = n;
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace mdfhp
