#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace finrank::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumerical = 3 };

/// Runs one subcommand. `args` excludes the program name.
int dispatch(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

/// `key = value` lines ('#' starts a comment) as `--key value` tokens.
std::vector<std::string> config_tokens(const std::string& text, const std::string& origin);

} // namespace finrank::cli
