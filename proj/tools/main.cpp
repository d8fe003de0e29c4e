#include <iostream>

#include "transunet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return transunet::run_cli(args, std::cout, std::cerr);
}
