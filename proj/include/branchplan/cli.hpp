// Copyright (c) 2026, branchplan authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace branchplan {

/// Runs the `branchplan` command line. `args` excludes the program name.
/// Returns the process exit code: 0 on success, 1 on a module error, 2 on a
/// usage error. Failures print exactly one `error: <module>: <message>` line
/// to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace branchplan
