#include "umsd/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return umsd::run_cli(argc, argv, std::cout, std::cerr); }
