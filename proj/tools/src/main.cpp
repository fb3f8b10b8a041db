#include <iostream>

#include "wavy/cli/commands.hpp"

int main(int argc, char** argv) { return wavy::cli::run_cli(argc, argv, std::cout, std::cerr); }
