// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "modem/cli.hpp"

int main(int argc, char **argv) {
    return modem::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
