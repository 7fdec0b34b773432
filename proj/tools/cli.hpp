#pragma once

#include <iosfwd>

namespace fisherscope::cli {

/// Parses argv and runs one pipeline stage. Returns the process exit status;
/// diagnostics go to `err`, progress lines to `out`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fisherscope::cli
