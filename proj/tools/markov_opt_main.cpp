#include <iostream>

#include "markov_opt/cli.hpp"

int main(int argc, char** argv) { return markov_opt::run_cli(argc, argv, std::cout, std::cerr); }
