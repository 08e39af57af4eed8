#include <iostream>
#include <string>
#include <vector>

#include "capsfield/cli/cli.hpp"

int main(int argc, char** argv) {
  return capsfield::cli::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
