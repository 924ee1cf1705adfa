#include <vector>

#include "dcnas/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dcnas::cli_main(std::move(args));
}
