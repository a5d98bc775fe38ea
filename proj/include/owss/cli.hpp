#pragma once

namespace owss {

// Full command-line entry point; returns the process exit code
// (0 ok, 1 usage, 2 data error, 3 numerical failure).
int cli_main(int argc, const char* const* argv);

}  // namespace owss
