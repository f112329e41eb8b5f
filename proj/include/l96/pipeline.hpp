#pragma once

// End-to-end experiment stages: data generation, training, sampling and forecasting.

#include "l96/config.hpp"
#include "l96/forecast.hpp"
#include "l96/io.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace l96 {

struct Dataset {
  TruthSeries truth;         // fine grid, t = 0 .. t_end
  TruthSeries continuation;  // fine grid after t_end, for forecasts from the last window
  ObservationSet obs;
};

/// Spun-up truth run, noisy observations and a forecast-horizon continuation.
Dataset make_dataset(const ExperimentConfig& cfg);

/// truth.csv, continuation.csv (t, X1..XK, C1..CK) and the observation files in `dir`.
std::vector<std::string> write_dataset(const std::string& dir, const Dataset& d);
Dataset read_dataset(const std::string& dir);

/// Observation row the forecast window ends on: the newest row of the first training
/// window (first) or the final observation (last).
std::size_t forecast_anchor_row(const ExperimentConfig& cfg, const ObservationSet& obs, const std::string& init);

struct ForecastTruth {
  std::vector<double> times;
  Mat states;
  Mat closure;
};

/// Clean slow states and coupling term at t_newest + i dt_obs, i = 1..horizon.
ForecastTruth forecast_truth(const Dataset& d, double delta_t, double t_newest, std::size_t horizon);

/// Noise-free observations on the same grid, taken from the stored truth series.
ObservationSet clean_observations(const Dataset& d, std::size_t stride);

/// Teacher-forced one-step RMSE over every target row; +inf on blowup.
double one_step_rmse(const ClosureTerm& closure, const ObservationSet& obs, const ClosureConfig& cfg);

TrainReport train_variant(const ExperimentConfig& cfg, const ObservationSet& obs, Variant v);
Chain sample_variant(const ExperimentConfig& cfg, const ObservationSet& obs, Variant v, const TrainReport& trained);

struct InitOutcome {
  std::string init;
  double t_start = 0.0;
  ForecastTruth truth;
  RolloutResult deterministic;
  MetricsReport deterministic_metrics;
  RolloutResult zero;
  MetricsReport zero_metrics;
  std::optional<ForecastEnsemble> ensemble;
  std::optional<MetricsReport> ensemble_metrics;
};

InitOutcome forecast_variant(const ExperimentConfig& cfg, const Dataset& d, Variant v, const ClosureParams& params,
                             const Chain* chain, const std::string& init);

struct VariantOutcome {
  Variant variant = Variant::History;
  TrainReport train;
  std::optional<Chain> chain;
  std::vector<InitOutcome> inits;
};

/// Train, optionally sample, then forecast from each requested init.
VariantOutcome run_variant(const ExperimentConfig& cfg, const Dataset& d, Variant v, bool with_hmc,
                           const std::vector<std::string>& inits);

struct UqCell {
  double F = 0.0;
  double noise = 0.0;
  std::optional<double> sigma_r_first, sigma_r_last;
  std::string error;  // non-empty when the cell failed

  std::optional<double> sigma_r_mean() const;
};

/// History-variant sigma_r over the F x noise grid, each cell a full pipeline run.
std::vector<UqCell> uq_sweep(const ExperimentConfig& base, const std::vector<double>& F_values,
                             const std::vector<double>& noise_values);

nlohmann::json metrics_json(const MetricsReport& m);
nlohmann::json stability_json(const StabilityReport& s);

/// Band CSV: t, then mean, lower and upper 2-sigma bounds and truth for each site.
CsvTable band_table(const std::vector<double>& times, const Mat& mean, const Mat& variance, const Mat& truth,
                    const std::string& prefix);
/// Long-format member tracks: member, sample, t, X1..XK.
CsvTable members_table(const ForecastEnsemble& e);

}  // namespace l96
