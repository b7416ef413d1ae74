#include <iostream>

#include "cardio/cli.hpp"

int main(int argc, char** argv) { return cardio::run_cli(argc, argv, std::cout, std::cerr); }
