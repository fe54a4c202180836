#pragma once

#include <iosfwd>

#include "twinnet/config.hpp"

namespace twinnet::cli {

// twinnet <command> --config PATH [--section.key=value ...] --out DIR
struct RunSpec {
  std::string command;
  std::string config_path;
  std::string out_dir;
  std::vector<std::pair<std::string, std::string>> overrides;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

// Parses argv into a RunSpec; throws InvalidArgument on malformed flags.
RunSpec parse_args(int argc, const char* const* argv);

// Loads the config file (when given), applies overrides, validates keys.
Config load_config(const RunSpec& spec);

int cmd_train(const Config& cfg, const std::string& out_dir, std::ostream& os);
int cmd_eval(const Config& cfg, const std::string& out_dir, std::ostream& os);
int cmd_sample(const Config& cfg, const std::string& out_dir, std::ostream& os);
int cmd_sweep(const Config& cfg, const std::string& out_dir, std::ostream& os);
int cmd_gradcheck(const Config& cfg, const std::string& out_dir, std::ostream& os);
int cmd_diagnose(const Config& cfg, const std::string& out_dir, std::ostream& os);

// Dispatch + exception→exit-code mapping (0 ok, 1 check failure, 2 usage).
int run(const RunSpec& spec, std::ostream& os, std::ostream& err);
int main_entry(int argc, const char* const* argv);

}  // namespace twinnet::cli
