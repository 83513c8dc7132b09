// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace cadrads::cli {

// Runs one CLI invocation (argv without the program name). Returns the
// process exit code: 0 ok, 1 usage/config, 2 data, 3 numerical failure.
// Errors are printed to stderr as one JSON line {code, stage, message}.
int run(const std::vector<std::string>& args);

}  // namespace cadrads::cli
