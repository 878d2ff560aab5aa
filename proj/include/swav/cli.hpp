#pragma once

// Command-line front end. Every command writes config.json, metrics.json,
// log.txt and (for training commands) a checkpoint into --run-dir.
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error;
// failures print {"error": {...}} on the error stream.

#include <json.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace swav::cli {

/// Configuration with every key a config file may set.
nlohmann::json default_config();

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace swav::cli
