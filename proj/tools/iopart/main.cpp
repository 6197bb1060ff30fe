#include <iostream>

#include "iop/cli.hpp"

int main(int argc, char** argv) { return iop::cli::run(argc, argv, std::cout, std::cerr); }
