#include <iostream>

#include "ocrseg/cli.hpp"

int main(int argc, char** argv) { return ocrseg::cli_main(argc, argv, std::cout, std::cerr); }
