#include <iostream>

#include "cmllm/cli/commands.hpp"

int main(int argc, char** argv) { return cmllm::cli::run_cli(argc, argv, std::cout, std::cerr); }
