#include <iostream>

#include "distbalance/cli.hpp"

int main(int argc, char** argv) { return distbalance::run_cli(argc, argv, std::cout, std::cerr); }
