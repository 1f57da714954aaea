#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace fpliif {

/// Entry point of the command-line tool:
///   synth | train | eval | infer | bench
/// Returns the process exit code; usage errors print help to `err` and
/// return nonzero. The effective configuration is echoed to `out` as JSON
/// before a command runs.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Overlay colours, indexed by class id modulo the table size.
const std::vector<std::array<std::uint8_t, 3>>& class_palette();

}  // namespace fpliif
