#include <iostream>

#include "sfm/cli/commands.hpp"

int main(int argc, char** argv) { return sfm::cli::run_cli(argc, argv, std::cout, std::cerr); }
