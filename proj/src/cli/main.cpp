#include <iostream>

#include "cspine/cli/commands.hpp"

int main(int argc, char** argv) { return cspine::cli::run_cli(argc, argv, std::cout, std::cerr); }
