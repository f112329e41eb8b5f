#pragma once

// Rollout losses, teacher-forced one-step fits and two-phase Adam training.

#include "l96/closure.hpp"
#include "l96/mlp.hpp"
#include "l96/truth.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace l96 {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 512;
  std::size_t n_f = 5;  // phase-2 rollout depth
  std::size_t phase1_iters = 15000;
  std::size_t phase2_iters = 30000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  double divergence_threshold = 1e6;
  std::size_t divergence_patience = 100;

  void validate() const;
};

/// Loss assigned to a batch whose rollout blew up. Its gradient is zero.
inline constexpr double kBlowupLoss = 1e12;

struct LossResult {
  double value = 0.0;
  bool blowup = false;
  std::string diagnostic;  // set when blowup
};

/// First observation rows a training sample may start at for rollout depth n_f:
/// history windows occupy rows j .. j + 2 n_h + 1 and targets the next 2 n_f rows;
/// instantaneous samples start at row j and target the next n_f rows.
std::vector<std::size_t> valid_starts(const ObservationSet& obs, const ClosureConfig& cfg, std::size_t n_f);

/// Mean over the batch of the squared error averaged over K and all emitted data-time
/// points. When `grad` is non-empty the closure must be differentiable and d(loss)/d(theta)
/// is accumulated into it.
LossResult rollout_loss(const ClosureTerm& closure, const ObservationSet& obs, std::span<const std::size_t> batch,
                        std::size_t n_f, const ClosureConfig& cfg, std::span<double> grad = {});

/// History-variant loss: dual-chain rollout of 2 n_f ticks from each window.
LossResult loss_history(const ClosureParams& params, const ObservationSet& obs, std::span<const std::size_t> batch,
                        std::size_t n_f, const ClosureConfig& cfg, std::span<double> grad = {});

/// Instantaneous-variant loss: n_f single-chain steps of dt_obs from each start row.
LossResult loss_instantaneous(const ClosureParams& params, const ObservationSet& obs,
                              std::span<const std::size_t> batch, std::size_t n_f, const ClosureConfig& cfg,
                              std::span<double> grad = {});

/// Sum of squared teacher-forced one-step residuals over every target row that admits a
/// data window (rows 2 n_h + 2 .. n-1 for the history variant, 1 .. n-1 otherwise).
struct OneStepFit {
  double ssr = 0.0;
  std::size_t count = 0;  // scalar residuals D
  bool blowup = false;
};

/// Optionally accumulates grad_scale * d(ssr)/d(theta) into `grad`.
OneStepFit one_step_fit(const ClosureTerm& closure, const ObservationSet& obs, const ClosureConfig& cfg,
                        std::span<double> grad = {}, double grad_scale = 1.0);

/// Same over an explicit list of target rows; repeated rows count repeatedly.
OneStepFit one_step_fit_rows(const ClosureTerm& closure, const ObservationSet& obs, const ClosureConfig& cfg,
                             std::span<const std::size_t> targets, std::span<double> grad = {},
                             double grad_scale = 1.0);

std::vector<std::size_t> one_step_targets(const ObservationSet& obs, const ClosureConfig& cfg);

struct Adam {
  double lr, beta1, beta2, eps;
  std::vector<double> m, v;
  std::size_t t = 0;

  Adam(std::size_t n, double lr, double beta1, double beta2, double eps);
  void step(std::span<double> x, std::span<const double> g);
};

struct TrainReport {
  std::vector<double> loss_curve;
  std::size_t phase1_iters = 0;
  ClosureParams final_params;
  double residual_variance = 0.0;  // SSR / D of one-step residuals at the final params
  double one_step_rmse = 0.0;
  double zero_closure_one_step_rmse = 0.0;
  std::size_t blowup_batches = 0;
  std::vector<std::string> diagnostics;
};

/// Builds the closure network for a configuration.
MlpArchitecture closure_architecture(const ClosureConfig& cfg, std::size_t hidden_layers, std::size_t hidden_width,
                                     Activation activation);

/// Phase 1: phase1_iters at n_f = 1. Phase 2: phase2_iters at cfg.n_f. Throws
/// TrainingDiverged when the loss stays above the divergence threshold.
TrainReport adam_train(const ObservationSet& obs, const ClosureParams& init, const ClosureConfig& ccfg,
                       const TrainConfig& tcfg);

}  // namespace l96
