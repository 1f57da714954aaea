#pragma once

#include <string>

namespace fpliif {

/// Process-wide knobs for long-running executables. Keeps freed blocks in
/// the heap instead of unmapping them (large per-op buffers otherwise fault
/// in fresh pages on every step) and pins Eigen's thread count (0 = leave).
void configure_runtime(int threads = 0);

// "<cpu model>, <n> hw threads, <compiler>" for benchmark reports.
std::string host_descriptor();

}  // namespace fpliif
