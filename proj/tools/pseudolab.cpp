#include <iostream>

#include "pseudolab/cli.hpp"

int main(int argc, char** argv) {
  return pseudolab::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
