#include <iostream>

#include "cmcr/cli.hpp"

int main(int argc, char** argv) { return cmcr::cli::run(argc, argv, std::cout, std::cerr); }
