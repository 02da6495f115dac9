#include "snagg/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return snagg::run_cli(argc, argv, std::cout, std::cerr); }
