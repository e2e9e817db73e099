#pragma once

#include <iosfwd>

namespace icshunt::cli {

/// Runs one `icshunt` invocation. Returns 0 on success, 1 on a runtime
/// failure and 2 on a usage error. Tables and records go to `out`; usage and
/// error messages go to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace icshunt::cli
