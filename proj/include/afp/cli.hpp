#pragma once

#include <ostream>

namespace afp::cli {

/// Entry point of the `afp` tool. Results go to `out`, logs and errors to
/// `err`. Returns 0 on success, 1 on an operational error (bad or missing
/// input data), 2 on a usage or configuration error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace afp::cli
