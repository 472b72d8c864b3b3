#include "litsearch/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return litsearch::cli::run(argc, argv, std::cout, std::cerr); }
