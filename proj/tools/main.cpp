#include <iostream>

#include "triskelion/cli.hpp"

int main(int argc, char** argv) { return triskelion::cli::run_cli(argc, argv, std::cout, std::cerr); }
