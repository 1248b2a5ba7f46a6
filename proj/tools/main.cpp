#include <string>
#include <vector>

#include "renetseg/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return renetseg::run_cli(args);
}
