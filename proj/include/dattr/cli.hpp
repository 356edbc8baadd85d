#pragma once

#include <string>
#include <vector>

namespace dattr::cli {

// Parses argv and dispatches to the experiment runners. Returns 0 on
// success, 1 on usage errors, 2 on experiment errors.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace dattr::cli
