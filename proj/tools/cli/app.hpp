#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace mlstm::cli {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2, kExitData = 3 };

struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

// Flat "key = value" lines. '#' starts a comment, blank lines are skipped and
// surrounding whitespace is trimmed. Keys are long option names without the
// leading dashes; a key may appear once. Throws std::invalid_argument with
// the offending line on any other input.
std::vector<ConfigEntry> parse_config(std::istream& in, const std::string& source);
std::vector<ConfigEntry> read_config(const std::filesystem::path& path);

// args excludes the program name. Returns an ExitCode.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mlstm::cli
