#include <iostream>

#include "geca/cli.hpp"

int main(int argc, char** argv) { return geca::run_cli(argc, argv, std::cout, std::cerr); }
