#pragma once

#include <string>
#include <vector>

namespace lazyconv::cli {

/// Entry point of the `lazyconv` tool. Returns the process exit code.
int run(int argc, char** argv);
int run(const std::vector<std::string>& args);

}  // namespace lazyconv::cli
