#include <iostream>

#include "pgqa/cli.hpp"

int main(int argc, char** argv) { return pgqa::cli::run(argc, argv, std::cout, std::cerr); }
