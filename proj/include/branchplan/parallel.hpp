// Copyright (c) 2026, branchplan authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace branchplan {

/// Worker count from BRANCHPLAN_THREADS, falling back to the core count.
unsigned default_thread_count();

/// Runs fn(i) for every i in [0, count) on at most `threads` workers.
/// Units are claimed through an atomic cursor, so callers must write results
/// into per-index slots. If several units throw, the exception of the lowest
/// index is rethrown, which keeps failures schedule-independent.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
    if (count == 0) return;
    const std::size_t workers =
        std::min<std::size_t>(count, std::max(1u, threads == 0 ? default_thread_count() : threads));
    std::vector<std::exception_ptr> errors(count);
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
                break;
            }
        }
    } else {
        std::atomic<std::size_t> cursor{0};
        auto work = [&] {
            for (std::size_t i = cursor.fetch_add(1); i < count; i = cursor.fetch_add(1)) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        };
        std::vector<std::jthread> pool;
        pool.reserve(workers - 1);
        for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
        work();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace branchplan
