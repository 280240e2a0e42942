// Copyright (c) 2026, branchplan authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace branchplan {

/// Error raised by any toolkit module. `what()` is "<module>: <message>" so
/// the CLI can print it as a single machine-parseable line.
class Error : public std::runtime_error {
public:
    Error(std::string module, const std::string& message)
        : std::runtime_error(module + ": " + message), module_(std::move(module)) {}

    const std::string& module() const noexcept { return module_; }

private:
    std::string module_;
};

}  // namespace branchplan
