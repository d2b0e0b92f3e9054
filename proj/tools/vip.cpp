#include "vip/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return vip::cli_main({argv + 1, argv + argc}, std::cout, std::cerr);
}
