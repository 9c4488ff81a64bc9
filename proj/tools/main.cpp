#include <iostream>
#include <string>
#include <vector>

#include "deepkkl/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dkkl::run_cli(args, std::cout, std::cerr);
}
