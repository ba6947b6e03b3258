#pragma once

#include <iosfwd>

namespace cemco {

/// Runs one `cemco` command line. Returns the process exit status; errors are
/// written to `err` as a single JSON object.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cemco
