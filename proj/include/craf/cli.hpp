#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace craf::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kSuccess = 0, kUsage = 1, kRuntime = 2 };

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::string output_dir;
  std::string tool_version = kToolVersion;
  std::string started;
  std::string finished;  // empty while the run is in progress
  std::string status = "running";

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& path) const;
};

/// Runs one of: synth, train, eval, adapt, gradcheck, ablate, complexity, report.
/// Returns 0 on success, 1 on usage errors and 2 on runtime errors.
int dispatch(int argc, const char* const* argv);
int dispatch(const std::vector<std::string>& args);

}  // namespace craf::cli
