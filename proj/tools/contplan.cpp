#include "contplan/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return contplan::cli_main(argc, argv, std::cout, std::cerr); }
