#pragma once

// File formats: full-precision CSV tables, observation sets, checkpoints, chains and hashes.

#include "l96/closure.hpp"
#include "l96/hmc.hpp"
#include "l96/train.hpp"
#include "l96/truth.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace l96 {

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

/// Writes `content` to `path` via a temporary file and rename. Throws IoError.
void write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);
void ensure_directory(const std::string& path);

void write_json(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);

/// Numeric CSV with a header row; values printed with 17 significant digits.
struct CsvTable {
  std::vector<std::string> header;
  Mat data;
};
std::string format_csv(const CsvTable& t);
void write_csv(const std::string& path, const CsvTable& t);
CsvTable read_csv(const std::string& path);

/// Columns t, X1..XK and, when `with_coupling`, C1..CK.
CsvTable trajectory_table(const std::vector<double>& times, const Mat& slow, const Mat* coupling);
/// Columns t, X1..XK, P1..PK.
CsvTable rollout_table(const RolloutResult& r);

/// observations.json (metadata) + observations.csv (t, X1..XK) in `dir`.
void write_observations(const std::string& dir, const ObservationSet& obs);
ObservationSet read_observations(const std::string& dir);

/// Slow and coupling series of a truth file written by trajectory_table.
struct TruthSeries {
  std::vector<double> times;
  Mat slow;
  Mat coupling;
};
TruthSeries read_truth_csv(const std::string& path);

/// Checkpoint: architecture, closure settings, training metadata and the flat parameters.
struct Checkpoint {
  ClosureConfig closure;
  TrainReport report;
  std::uint64_t init_seed = 0;
  std::string config_hash;
};
void write_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint read_checkpoint(const std::string& path);

/// chain_manifest.json, chain_samples.f64 ([N_s x (N + 2)] little-endian doubles, theta
/// then log gamma and log lambda) and chain_logpost.csv in `dir`.
void write_chain(const std::string& dir, const Chain& chain, const nlohmann::json& extra);
Chain read_chain(const std::string& dir);

nlohmann::json mlp_architecture_json(const MlpArchitecture& a);
MlpArchitecture mlp_architecture_from_json(const nlohmann::json& j);
nlohmann::json closure_config_json(const ClosureConfig& c);
ClosureConfig closure_config_from_json(const nlohmann::json& j);

}  // namespace l96
