#include <iostream>

#include "marrprobe/cli/cli.hpp"

int main(int argc, char** argv) {
  return marrprobe::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
