#include <iostream>
#include <string>
#include <vector>

#include "blocktune/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return blocktune::run_cli(args, std::cout, std::cerr);
}
