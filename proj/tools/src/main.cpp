#include <iostream>

#include "rswin_cli/commands.hpp"

int main(int argc, char** argv) { return rswin::cli::run_cli(argc, argv, std::cout, std::cerr); }
