#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "marrprobe/cli/config.hpp"

namespace marrprobe::cli {

// Exit codes shared by every subcommand.
enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kNumerical = 4 };

// Subcommands on fully resolved settings. Errors propagate as exceptions.
void cmd_dataset(const Settings& s, std::ostream& log);
void cmd_train(const Settings& s, std::ostream& log);
void cmd_probe(const Settings& s, std::ostream& log);
void cmd_analyze(const Settings& s, std::ostream& log);
void cmd_render_debug(const Settings& s, std::ostream& log);

// Parses `args` (without the program name), runs the subcommand and maps
// exceptions to exit codes with a one-line message on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace marrprobe::cli
