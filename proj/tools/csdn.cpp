#include <iostream>

#include "csdn/cli.hpp"

int main(int argc, char** argv) { return csdn::cli::run(argc, argv, std::cout, std::cerr); }
