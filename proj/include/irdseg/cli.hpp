#pragma once

namespace irdseg {

// Subcommand dispatcher behind the irdseg binary. Returns the process exit
// code: 0 success, 2 config/usage error, 3 I/O error, 4 numerical failure.
int cli_main(int argc, const char* const* argv);

}  // namespace irdseg
