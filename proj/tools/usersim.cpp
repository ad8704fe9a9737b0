#include <iostream>

#include "usersim/cli.hpp"

int main(int argc, char** argv) { return usersim::run_cli(argc, argv, std::cout, std::cerr); }
