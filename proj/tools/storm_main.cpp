#include <iostream>

#include "storm/cli.hpp"

int main(int argc, char** argv) { return storm::cli::cli_main(argc, argv, std::cout, std::cerr); }
