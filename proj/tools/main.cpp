#include <iostream>
#include <string>
#include <vector>

#include "aleatoric/cli.hpp"

int main(int argc, char** argv) {
  return aleatoric::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
