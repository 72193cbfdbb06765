#include <iostream>

#include "mwi/cli.hpp"

int main(int argc, char** argv) { return mwi::cli::main(argc, argv, std::cout, std::cerr); }
