#pragma once

// Online forecasts, posterior ensembles and forecast-skill metrics.

#include "l96/closure.hpp"
#include "l96/hmc.hpp"
#include "l96/truth.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace l96 {

/// Window of `length` observation rows ending at `newest_row`, newest first.
HistoryWindow window_at(const ObservationSet& obs, std::size_t newest_row, std::size_t length);

/// Rollout for either variant from the newest rows of `init` (the instantaneous variant
/// uses only row 0). Never throws on blowup: the partial trajectory is returned.
RolloutResult forecast_deterministic(const ClosureTerm& closure, const HistoryWindow& init, std::size_t horizon,
                                     const ClosureConfig& cfg);
RolloutResult forecast_deterministic(const ClosureParams& params, const HistoryWindow& init, std::size_t horizon,
                                     const ClosureConfig& cfg);

struct EnsembleOptions {
  double burn_in_fraction = 0.25;
  std::size_t thinning = 4;
  bool noise_inflation = false;  // add eps ~ N(0, 1/gamma_s) to every member state
  std::uint64_t noise_seed = 0;
};

struct ForecastEnsemble {
  std::vector<double> times;
  std::vector<std::size_t> member_samples;  // chain index of every member
  std::vector<Mat> member_states;           // [steps x K] per member, blown-up members included
  std::vector<Mat> member_closures;
  std::vector<char> member_ok;
  std::vector<std::optional<double>> member_blowup_time;
  Mat mean, variance;                  // states, over finite members
  Mat closure_mean, closure_variance;  // closures, over finite members
  std::size_t map_sample = 0;
  Mat map_track, map_closures;
  std::size_t blown_up = 0;

  std::size_t size() const { return member_states.size(); }
  std::size_t finite_members() const { return size() - blown_up; }
};

/// Indices kept after burn-in and thinning.
std::vector<std::size_t> retained_samples(std::size_t chain_length, double burn_in_fraction, std::size_t thinning);

/// Population mean and variance (divide by N) over members flagged ok.
void ensemble_moments(const std::vector<Mat>& members, const std::vector<char>& ok, Mat& mean, Mat& variance);

/// One rollout per retained sample (in parallel), moments over finite members, and the
/// track of the retained sample with the largest log-posterior.
ForecastEnsemble forecast_ensemble(const Chain& chain, const HistoryWindow& init, std::size_t horizon,
                                   const ClosureConfig& cfg, const EnsembleOptions& opts);

struct RmseSeries {
  std::vector<double> series;  // value after each prefix length 1..n
  double final = 0.0;
};

/// sqrt(sum_i |X_i - X*_i|^2) / sqrt(sum_i |X_i|^2) over prefixes of the rows.
RmseSeries rmse(const Mat& truth, const Mat& pred);

/// Fraction of entries outside [mean - 2 sigma, mean + 2 sigma].
double frac_out_2sigma(const Mat& truth, const Mat& mean, const Mat& variance);

struct SigmaR {
  double value = 0.0;
  std::size_t included = 0;
  std::size_t excluded = 0;  // |X| < 1e-8
};

/// Mean over included (k, i) of sigma_k(t_i) / X_k(t_i) with signed X.
SigmaR sigma_r(const Mat& truth, const Mat& variance);

struct MetricsReport {
  RmseSeries rmse_states;
  RmseSeries rmse_closure;
  std::optional<double> frac_out_2sigma_states;
  std::optional<double> frac_out_2sigma_closure;
  std::optional<SigmaR> sigma_r;
  std::size_t steps = 0;
  std::optional<double> divergence_time;
  std::size_t members = 0;
  std::size_t blown_up_members = 0;
};

/// Metrics of a single trajectory. Rows beyond a divergence are absent; rmse is then
/// computed on the available prefix and divergence_time is set.
MetricsReport deterministic_metrics(const RolloutResult& r, const Mat& truth_states, const Mat& truth_closure);

/// Metrics of the ensemble mean with out-of-2 sigma fractions and sigma_r.
MetricsReport ensemble_metrics(const ForecastEnsemble& e, const Mat& truth_states, const Mat& truth_closure);

struct StabilityReport {
  std::optional<double> truth_divergence_time;  // truth model at the coarse step
  std::vector<std::optional<double>> seed_divergence_times;
  std::vector<std::uint64_t> seeds;
  bool reference_finite = false;  // truth at the configured step over its full horizon
  bool model_finite = false;
  std::optional<double> model_divergence_time;
  double model_rmse = 0.0;
  double coarse_step = 0.0;
  std::size_t horizon = 0;
};

/// Truth model at step 2 dt_obs from the spun-up initial state (and from the spun-up
/// states of `extra_seeds`), and the history model from `init` over `horizon` ticks.
StabilityReport coarse_step_stability_experiment(const TruthConfig& truth_cfg, const ClosureTerm& model,
                                                 const ClosureConfig& cfg, const HistoryWindow& init,
                                                 std::size_t horizon, const Mat& truth_states,
                                                 const std::vector<std::uint64_t>& extra_seeds,
                                                 bool check_reference = true);

}  // namespace l96
