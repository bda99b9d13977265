#pragma once

#include <iosfwd>

namespace cmllm::cli {

/// Entry point of the `cmllm` tool. Returns the process exit code:
/// 0 ok, 2 I/O, 3 invalid input, 4 numeric failure, 5 incompatible artifacts.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cmllm::cli
