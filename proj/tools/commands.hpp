// Command implementations behind the tsep executable. Each command runs from
// a fully resolved JSON configuration, writes into an output directory and
// returns the manifest it recorded there.
#ifndef TSEP_TOOLS_COMMANDS_HPP_
#define TSEP_TOOLS_COMMANDS_HPP_

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsep/experiment.hpp"

namespace tsep::cli {

// Commands that can be replayed from a manifest.
inline constexpr const char* kCommands[] = {"synth", "train", "infer", "score", "embed-study"};

// Full schema of a command's configuration with every default filled in.
nlohmann::json default_config(const std::string& command);

// defaults <- config file section <- command-line overrides. Keys absent from
// the defaults are rejected at every level.
nlohmann::json resolve_config(const std::string& command, const nlohmann::json& file_section,
                              const nlohmann::json& overrides);

// Runs the command and writes manifest.json into out_dir. Human-readable
// summaries go to `out`.
Manifest execute(const std::string& command, const nlohmann::json& config,
                 const std::filesystem::path& out_dir, std::ostream& out);

struct ReplayResult {
  bool identical = true;
  std::vector<std::string> differences;
  Manifest replayed;
};

// Re-runs the recorded command into out_dir and compares output hashes and
// metrics. Throws if an input file no longer matches its recorded hash.
ReplayResult replay(const Manifest& recorded, const std::filesystem::path& out_dir,
                    std::ostream& out);

// Entry point: args excludes the program name. Returns the exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tsep::cli

#endif  // TSEP_TOOLS_COMMANDS_HPP_
