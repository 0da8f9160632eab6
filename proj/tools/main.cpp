// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#include <string>
#include <vector>

#include "lorax/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return lorax::run_cli(args);
}
