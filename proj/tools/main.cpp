#include <iostream>

#include "e2eload/cli.hpp"

int main(int argc, char** argv) { return e2eload::run_cli(argc, argv, std::cout, std::cerr); }
