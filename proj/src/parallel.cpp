// Copyright (c) 2026, branchplan authors
// SPDX-License-Identifier: Apache-2.0

#include "branchplan/parallel.hpp"

#include <charconv>
#include <cstdlib>
#include <cstring>

namespace branchplan {

unsigned default_thread_count() {
    if (const char* env = std::getenv("BRANCHPLAN_THREADS")) {
        unsigned value = 0;
        auto [ptr, ec] = std::from_chars(env, env + std::strlen(env), value);
        if (ec == std::errc() && *ptr == '\0' && value > 0) return value;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace branchplan
