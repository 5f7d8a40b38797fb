#include <iostream>

#include "bssm/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return bssm::run_cli(args, std::cout, std::cerr);
}
