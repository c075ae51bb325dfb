#include <iostream>

#include "pmuev/cli.hpp"

int main(int argc, char** argv) { return pmuev::run_cli(argc, argv, std::cout, std::cerr); }
