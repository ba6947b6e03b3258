#include "cemco/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return cemco::cli_dispatch(argc, argv, std::cout, std::cerr); }
