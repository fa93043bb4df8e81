#include <iostream>

#include "whc/cli.hpp"

int main(int argc, char** argv) { return whc::cli::run(argc, argv, std::cout, std::cerr); }
