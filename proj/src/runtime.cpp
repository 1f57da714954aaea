#include "fpliif/runtime.hpp"

#include <malloc.h>

#include <Eigen/Core>

#include <fstream>
#include <thread>

namespace fpliif {

void configure_runtime(int threads) {
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  if (threads > 0) Eigen::setNbThreads(threads);
}

std::string host_descriptor() {
  std::string cpu = "unknown cpu";
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(colon + 2);
      break;
    }
  }
  std::string compiler;
#if defined(__clang__)
  compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
  compiler = "gcc " __VERSION__;
#endif
  return cpu + ", " + std::to_string(std::thread::hardware_concurrency()) + " hw threads, " + compiler;
}

}  // namespace fpliif
