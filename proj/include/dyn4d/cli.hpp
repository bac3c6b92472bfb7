#pragma once

#include <string>
#include <vector>

namespace dyn4d {

/// Entry point of the `dyn4d` command-line tool. Returns the process exit
/// code: 0 success, 1 usage or validation failure, 2 I/O failure.
int cli_main(int argc, char **argv);
int cli_main(const std::vector<std::string> &args); // args[0] is the program name

} // namespace dyn4d
