#pragma once

namespace wvcal
{
// Subcommands simulate, wv, fit, mc and convert-units. Returns the process
// exit code: 0 ok, 1 usage, 2 non-convergence, 3 identifiability, 4 I/O.
int run_cli(int argc, const char* const* argv);
}
