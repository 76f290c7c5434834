#include "wxr/commands.hpp"

#include <iostream>

int main(int argc, char** argv) { return wxr::run_cli(argc, argv, std::cout, std::cerr); }
