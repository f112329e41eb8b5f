#pragma once

// Two-timescale Lorenz '96 truth model and observation generation.

#include "l96/types.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace l96 {

struct TruthConfig {
  std::size_t K = 8;    // slow variables
  std::size_t J = 32;   // fast variables per slow variable
  double F = 15.0;
  double h = 1.0;
  double b = 10.0;
  double c = 10.0;
  double dt = 0.005;
  double t_end = 100.0;
  double spinup = 2.0;       // discarded before t = 0
  double init_x_std = 1.0;   // X_k ~ N(0, init_x_std^2)
  double init_y_std = 0.1;   // Y_j ~ N(0, init_y_std^2)
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t step_count() const;  // number of dt steps to reach t_end
  double coupling_scale() const { return h * c / b; }
};

struct FullState {
  Vec x;  // K slow values
  Vec y;  // J*K fast values

  Vec flat() const;
  static FullState from_flat(const Vec& v, std::size_t K);
};

struct SlowState {
  Vec x;
  double t = 0.0;
};

/// Time derivative of the full system. Cyclic in k (period K) and in j (period J*K).
FullState truth_rhs(const FullState& state, const TruthConfig& cfg);

/// Allocation-free flat variant used by the integrators: in/out hold [X, Y].
void truth_rhs_flat(const double* in, double* out, const TruthConfig& cfg);

/// Coupling term -(hc/b) * sum_{j in block k} Y_j for every k.
Vec coupling_term(const Vec& y, const TruthConfig& cfg);

/// Random initial state followed by cfg.spinup MTU of integration.
FullState spun_up_initial_state(const TruthConfig& cfg);

struct TruthTrajectory {
  double dt = 0.0;
  std::vector<double> times;
  Mat slow;       // [n_times x K]
  Mat coupling;   // [n_times x K]
  Mat fast;       // [n_times x J*K], only when requested
  FullState final_state;
  std::optional<std::size_t> blowup_step;  // first offending step index, if any
  std::optional<double> blowup_time;

  std::size_t size() const { return times.size(); }
};

/// Integrates from x0 to cfg.t_end. Throws BlowupError on divergence.
TruthTrajectory simulate_truth(const TruthConfig& cfg, const FullState& x0, bool keep_fast = false);

/// Like simulate_truth but returns the partial trajectory and the divergence time
/// instead of throwing.
TruthTrajectory simulate_truth_partial(const TruthConfig& cfg, const FullState& x0,
                                       bool keep_fast = false);

struct ObservationSet {
  std::vector<double> times;
  Mat states;  // [n_points x K]
  double delta_t = 0.0;
  std::size_t stride = 1;
  double noise_fraction = 0.0;
  Vec per_var_std;
  std::uint64_t seed = 0;

  std::size_t size() const { return times.size(); }
  std::size_t K() const { return static_cast<std::size_t>(states.cols()); }
  void validate() const;
};

/// Keeps every stride-th slow state and adds N(0, (noise_fraction * sigma_k)^2) noise,
/// sigma_k being the population standard deviation of the clean subsampled series.
ObservationSet make_observations(const TruthTrajectory& traj, std::size_t stride, double noise_fraction,
                                 std::uint64_t seed);

struct LyapunovOptions {
  double transient = 5.0;       // MTU discarded
  double averaging = 50.0;      // MTU averaged
  double renorm_interval = 0.05;
  double perturbation = 1e-8;
};

/// Benettin-style largest Lyapunov exponent from renormalised perturbation growth measured
/// on the slow variables (1/MTU).
double estimate_max_lyapunov(const TruthConfig& cfg, const LyapunovOptions& opts = {});

}  // namespace l96
