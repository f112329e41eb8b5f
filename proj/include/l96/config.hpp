#pragma once

// Experiment configuration: one JSON document per experiment.

#include "l96/closure.hpp"
#include "l96/hmc.hpp"
#include "l96/mlp.hpp"
#include "l96/train.hpp"
#include "l96/truth.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>

namespace l96 {

struct ObservationConfig {
  std::size_t stride = 2;
  double noise_fraction = 0.03;
  std::uint64_t seed = 0;
};

struct ClosureSettings {
  Variant variant = Variant::History;
  std::size_t n_h = 2;
  std::size_t hidden_layers = 6;
  std::size_t hidden_width = 128;
  Activation activation = Activation::Tanh;
  InputMode input_mode = InputMode::SiteLocal;
  std::uint64_t init_seed = 0;
};

struct TrainSettings {
  TrainConfig base;  // base.n_f is ignored; the per-variant depths below apply
  std::size_t n_f_history = 5;
  std::size_t n_f_instantaneous = 4;
};

struct ForecastConfig {
  double horizon_mtu = 10.0;
  std::string init = "first";  // first | last
  std::size_t thinning = 4;
  double burn_in_fraction = 0.25;
  bool noise_inflation = false;
  std::uint64_t noise_seed = 0;
};

struct ExperimentConfig {
  std::string name = "experiment";
  TruthConfig truth;
  ObservationConfig observation;
  ClosureSettings closure;
  TrainSettings train;
  HmcConfig hmc;
  ForecastConfig forecast;
  std::size_t threads = 0;  // 0 = all cores
  std::string output_dir = "out";

  /// Throws ConfigError naming the offending field path.
  void validate() const;

  double delta_t() const { return truth.dt * static_cast<double>(observation.stride); }
  std::size_t horizon_ticks() const;
  ClosureConfig closure_config(Variant v) const;
  ClosureConfig closure_config() const { return closure_config(closure.variant); }
  MlpArchitecture architecture(Variant v) const;
  TrainConfig train_config(Variant v) const;
};

/// Strict parser: unknown keys and wrong types are rejected with their field path.
/// Missing keys keep their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

ExperimentConfig load_config(const std::string& path);

/// SHA-256 of the canonical (sorted-key, compact) JSON form without output_dir and
/// threads, neither of which changes any result.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace l96
