#pragma once

// Subcommands behind the command-line driver. Every command writes its outputs and a
// manifest.json (config, config hash, seeds, version, input and output hashes) to
// out_dir; rerunning a manifest must reproduce the recorded output hashes.

#include "l96/config.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace l96 {

struct CommandRequest {
  std::string command;  // simulate | train | hmc | forecast | uq-sweep | lyapunov | stability | pipeline
  ExperimentConfig config;
  std::string out_dir;
  std::string data_dir;    // train, hmc, forecast, stability
  std::string checkpoint;  // hmc, forecast, stability
  std::string chain_dir;   // forecast (optional)
  std::vector<double> F_values, noise_values;  // uq-sweep
  std::vector<std::string> variants;           // pipeline; empty = both
};

struct CommandResult {
  std::vector<std::string> outputs;  // relative to out_dir
  nlohmann::json summary;
  std::vector<std::string> warnings;
};

/// Runs the command and writes out_dir/manifest.json. Throws ConfigError, IoError,
/// BlowupError or TrainingDiverged.
CommandResult run_command(const CommandRequest& req);

nlohmann::json request_to_json(const CommandRequest& req);
CommandRequest request_from_json(const nlohmann::json& j);

struct RerunReport {
  std::vector<std::string> matching;
  std::vector<std::string> differing;
  bool ok() const { return differing.empty(); }
};

/// Re-executes the command recorded in `manifest_path` into `out_dir` (the manifest's own
/// directory when empty) and compares every output hash with the recorded one.
RerunReport rerun_manifest(const std::string& manifest_path, const std::string& out_dir);

}  // namespace l96
