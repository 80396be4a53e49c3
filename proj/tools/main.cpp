#include "rbtn/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return rbtn::cli_main(argc, argv, std::cout, std::cerr); }
