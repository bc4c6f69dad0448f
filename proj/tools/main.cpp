#include <iostream>
#include <string>
#include <vector>

#include "sae/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return sae::cli::run(args, std::cout, std::cerr);
}
