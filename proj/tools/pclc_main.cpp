#include <iostream>

#include "pclc/cli.hpp"

int main(int argc, char** argv) { return pclc::run_cli(argc, argv, std::cout, std::cerr); }
