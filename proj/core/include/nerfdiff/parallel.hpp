// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace nerfdiff {

/// Runs fn(worker, begin, end) over [0, count) split into `workers` contiguous
/// ranges. workers <= 1 runs inline on the caller, which is the bit-deterministic
/// path. The first exception thrown by any worker is rethrown on the caller.
inline void parallel_ranges(std::size_t count, int workers,
                            const std::function<void(int, std::size_t, std::size_t)>& fn) {
    if (workers <= 1 || count < 2) {
        fn(0, 0, count);
        return;
    }
    const auto n = static_cast<std::size_t>(workers);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n);
    for (std::size_t w = 0; w < n; ++w) {
        const std::size_t begin = count * w / n;
        const std::size_t end = count * (w + 1) / n;
        pool.emplace_back([&, w, begin, end] {
            try {
                fn(static_cast<int>(w), begin, end);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace nerfdiff
