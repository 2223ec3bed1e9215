#include <iostream>

#include "imamoe/cli.hpp"

int main(int argc, char** argv) { return imamoe::run_cli(argc, argv, std::cout, std::cerr); }
