#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace sepkron {

/// Invalid inputs or violated preconditions (caller error).
struct ValidationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Numerical breakdown inside an otherwise valid computation.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Relative eigenvalue cutoff used by all pseudo-inverses and matrix roots.
inline constexpr double kDefaultRtol = 1e-10;

/// Fresh generator for the stream (seed, s0, s1). Streams are independent of
/// worker scheduling, so any computation keyed by stream ids is reproducible
/// regardless of thread count.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t s0 = 0,
                                std::uint64_t s1 = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed),
                      static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(s0),
                      static_cast<std::uint32_t>(s0 >> 32),
                      static_cast<std::uint32_t>(s1),
                      static_cast<std::uint32_t>(s1 >> 32)};
    return std::mt19937_64(seq);
}

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Callers must write
/// results into per-index slots; with stream-seeded RNG this keeps outputs
/// identical for any worker count. The first exception wins and is rethrown.
template <class Fn>
void parallel_for(int n, int threads, Fn&& fn) {
    threads = resolve_threads(threads);
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    threads = std::min(threads, n);
    std::atomic<int> next{0};
    std::mutex err_mutex;
    std::exception_ptr err;
    auto worker = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!err) err = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace sepkron
