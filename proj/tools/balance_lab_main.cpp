#include <iostream>
#include <string>
#include <vector>

#include "balance_lab/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return balance_lab::run_cli(args, std::cout, std::cerr);
}
