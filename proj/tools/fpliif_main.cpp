#include <iostream>

#include "fpliif/cli.hpp"
#include "fpliif/runtime.hpp"

int main(int argc, char** argv) {
  fpliif::configure_runtime(1);
  return fpliif::dispatch(argc, argv, std::cout, std::cerr);
}
