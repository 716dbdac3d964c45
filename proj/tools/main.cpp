// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "cdiff/cli.hpp"

int main(int argc, char** argv) { return cdiff::run_cli(argc, argv, std::cout, std::cerr); }
