#include <iostream>

#include "uqadv/cli.hpp"

int main(int argc, char** argv) { return uqadv::run_cli(argc, argv, std::cout, std::cerr); }
