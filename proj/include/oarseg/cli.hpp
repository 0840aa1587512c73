// Command-line entry point: dataset generation, training, prediction,
// evaluation, and model summaries. Exposed as a function so tests can drive
// the same code path in-process.
#pragma once

#include <string>
#include <vector>

namespace oarseg {

// argv-style arguments without the program name. Returns the process exit
// code (0 on success).
int run_cli(const std::vector<std::string>& args);

}  // namespace oarseg
