#include <iostream>
#include <string>
#include <vector>

#include "hom/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return hom::cli::run(args, std::cout, std::cerr);
}
