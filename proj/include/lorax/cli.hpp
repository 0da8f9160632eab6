// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace lorax {

/// Entry point behind the `lorax` binary; takes argv-style arguments
/// (without the program name) and returns the process exit code.
/// Subcommands: inspect, similarity, transfer, atc, synth-bench.
int run_cli(const std::vector<std::string>& args);

}  // namespace lorax
