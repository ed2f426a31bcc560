#include <iostream>

#include "transfusion/cli.hpp"

int main(int argc, char** argv) { return transfusion::cli::run(argc, argv, std::cout, std::cerr); }
