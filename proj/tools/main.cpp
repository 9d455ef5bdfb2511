#include <iostream>

#include "cgm/cli.hpp"

int main(int argc, char** argv) { return cgm::run_cli(argc, argv, std::cout, std::cerr); }
