#pragma once

#include <iosfwd>

namespace pclc {

// Entry point of the `pclc` tool. Returns the process exit status; errors are
// reported on `err` as "error: <where>: <what>".
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pclc
