#pragma once

// Parameterised slow dynamics:
//   dX_k/dt = -X_{k-1}(X_{k-2} - X_{k+1}) - X_k + F + P(X_k(t), X_k(t - tau_1), ..., X_k(t - tau_nh))
// with tau_i = 2 i dt_obs and RK4 steps of 2 dt_obs (history variant), or with P(X_k(t)) only
// and RK4 steps of dt_obs (instantaneous variant).

#include "l96/mlp.hpp"
#include "l96/types.hpp"

#include <optional>
#include <span>
#include <vector>

namespace l96 {

enum class Variant { History, Instantaneous };
enum class InputMode { SiteLocal, FullState };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
std::string to_string(InputMode m);
InputMode input_mode_from_string(const std::string& s);

struct HistoryConfig {
  std::size_t n_h = 2;
  double delta_t = 0.01;
  void validate() const;
};

struct ClosureConfig {
  Variant variant = Variant::History;
  std::size_t K = 8;
  double forcing = 15.0;
  HistoryConfig history;
  InputMode input_mode = InputMode::SiteLocal;

  void validate() const;
  std::size_t lag_count() const { return variant == Variant::History ? history.n_h : 0; }
  /// RK4 step: 2 dt_obs for the history variant, dt_obs otherwise.
  double step() const { return variant == Variant::History ? 2.0 * history.delta_t : history.delta_t; }
  /// Buffer entries the next state is computed from: 2 for the interleaved history chains, 1 otherwise.
  std::size_t anchor_offset() const { return variant == Variant::History ? 2 : 1; }
  /// Data points needed to start a rollout: 2 n_h + 2 or 1.
  std::size_t window_length() const { return variant == Variant::History ? 2 * history.n_h + 2 : 1; }
  std::size_t network_input_dim() const;
};

/// Scratch kept by a closure evaluation for its backward pass.
struct StageTape {
  MlpTape mlp;
};

/// The subgrid term P evaluated for a batch of states. `current` and each lag are [B x K];
/// `times` holds the stage time of every batch row; `out` receives [B x K].
class ClosureTerm {
 public:
  virtual ~ClosureTerm() = default;
  virtual void evaluate(const Mat& current, std::span<const Mat* const> lags, std::span<const double> times, Mat& out,
                        StageTape* tape) const = 0;
  virtual bool differentiable() const { return false; }
  /// Overwrites d_current and d_lags with the input adjoints and accumulates the parameter
  /// adjoint into grad.
  virtual void backward(const StageTape& tape, const Mat& d_out, std::span<double> grad, Mat& d_current,
                        std::span<Mat> d_lags) const;
  virtual std::size_t parameter_count() const { return 0; }
};

/// Shared MLP applied at every site; input per site is its own lag stack (site-local) or
/// the whole state rotated so that the site comes first (full-state).
class NetworkClosure final : public ClosureTerm {
 public:
  NetworkClosure(const ClosureParams& params, const ClosureConfig& cfg);
  void evaluate(const Mat& current, std::span<const Mat* const> lags, std::span<const double> times, Mat& out,
                StageTape* tape) const override;
  bool differentiable() const override { return true; }
  void backward(const StageTape& tape, const Mat& d_out, std::span<double> grad, Mat& d_current,
                std::span<Mat> d_lags) const override;
  std::size_t parameter_count() const override { return params_.size(); }
  const ClosureParams& params() const { return params_; }

 private:
  const ClosureParams& params_;
  InputMode mode_;
  std::size_t K_;
  std::size_t lags_;
};

class ZeroClosure final : public ClosureTerm {
 public:
  void evaluate(const Mat& current, std::span<const Mat* const>, std::span<const double>, Mat& out,
                StageTape*) const override {
    out.setZero(current.rows(), current.cols());
  }
};

/// Replays a stored coupling-term series by time (exact grid hits only).
class CouplingLookupClosure final : public ClosureTerm {
 public:
  CouplingLookupClosure(double t0, double dt, Mat coupling);
  void evaluate(const Mat& current, std::span<const Mat* const> lags, std::span<const double> times, Mat& out,
                StageTape* tape) const override;

 private:
  double t0_;
  double dt_;
  Mat coupling_;
};

/// -X_{k-1}(X_{k-2} - X_{k+1}) - X_k + F row by row, cyclic in k.
Mat slow_advection(const Mat& x, double forcing);
Vec slow_advection(const Vec& x, double forcing);

/// Right-hand side of the history DDE for one state: `lags[i]` is X(t - tau_{i+1}).
Vec closure_rhs_hist(const Vec& current, std::span<const Vec> lags, const ClosureParams& params,
                     const ClosureConfig& cfg);

/// Lag sets for one RK4 step: r1 at t, r2/r3 at the midpoint, r4 at the end of the step.
struct StageLags {
  std::vector<const Mat*> r1, mid, r4;
};

struct StepTape {
  Mat s1, s2, s3, s4;  // stage states fed to f
  StageTape t1, t2, t3, t4;
  std::size_t n_r1 = 0, n_mid = 0, n_r4 = 0;
};

struct StageLagGrads {
  std::vector<Mat> r1, mid, r4;
};

/// X + (r1 + 2 r2 + 2 r3 + r4)/6 with r_i = h f(stage_i, lags_i). `t_anchor` per batch row.
Mat closure_rk4_step(const ClosureTerm& closure, double forcing, const Mat& anchor, const StageLags& lags, double h,
                     std::span<const double> t_anchor, StepTape* tape);

/// Reverse pass of closure_rk4_step. Writes d_anchor and d_lags (sized like the forward lag
/// sets); accumulates into grad.
void closure_rk4_step_backward(const ClosureTerm& closure, double forcing, double h, const StepTape& tape,
                               const Mat& d_out, std::span<double> grad, Mat& d_anchor, StageLagGrads& d_lags);

/// One DDE step from the newest row of `newest_first` (time t) to t + 2 dt_obs. Only rows
/// 0 .. 2 n_h are read: even offsets for r1/r4, odd offsets for the midpoint stages.
Vec dde_rk4_step(const Mat& newest_first, const ClosureTerm& closure, const ClosureConfig& cfg, double t = 0.0);
Vec dde_rk4_step(const Mat& newest_first, const ClosureParams& params, const ClosureConfig& cfg);

/// One instantaneous-closure RK4 step of dt_obs.
Vec ode_rk4_step(const Vec& state, const ClosureTerm& closure, const ClosureConfig& cfg, double t = 0.0);
Vec ode_rk4_step(const Vec& state, const ClosureParams& params, const ClosureConfig& cfg);

/// 2 n_h + 2 consecutive states, newest first.
struct HistoryWindow {
  Mat states;
  double t_newest = 0.0;
  void validate(const ClosureConfig& cfg) const;
};

struct RolloutResult {
  std::vector<double> times;
  Mat states;    // [steps x K]
  Mat closures;  // [steps x K], P along the trajectory with the r1 lag set
  std::optional<std::size_t> blowup_step;  // 0-based index of the first non-finite emission
  std::optional<double> blowup_time;

  std::size_t size() const { return times.size(); }
};

/// Batched rollout engine over a buffer of consecutive dt_obs-spaced states.
///
/// History variant: entry n is one DDE step from entry n - 2 (two interleaved chains of
/// stride 2 dt_obs, each taking its midpoint lags from the other). Instantaneous variant:
/// entry n is one ODE step from entry n - 1.
class BatchRollout {
 public:
  BatchRollout(const ClosureTerm& closure, const ClosureConfig& cfg);

  /// `buffer` holds the initial window oldest first (each [B x K]); `t_oldest` the time of
  /// buffer[0] per batch row. Appends up to `horizon` entries; stops at the first blowup.
  void run(std::vector<Mat>& buffer, std::span<const double> t_oldest, std::size_t horizon, bool keep_tape);

  /// Propagates d_buffer (same length as the buffer after run) back to the parameters.
  /// d_buffer is consumed in place.
  void backward(std::vector<Mat>& d_buffer, std::span<double> grad) const;

  std::optional<std::size_t> blowup_index() const { return blowup_; }

  struct LagIndices {
    std::size_t anchor = 0;
    std::vector<std::size_t> r1, mid, r4;
  };
  /// Buffer indices read when computing entry `target`.
  LagIndices lag_indices(std::size_t target) const;

 private:
  const ClosureTerm& closure_;
  ClosureConfig cfg_;
  std::size_t first_emitted_ = 0;
  std::size_t window_ = 0;
  std::vector<StepTape> tapes_;
  std::optional<std::size_t> blowup_;
};

/// Closure values along a trajectory buffer at `index` using the r1 lag set.
Mat closure_along(const ClosureTerm& closure, const ClosureConfig& cfg, const std::vector<Mat>& buffer,
                  std::size_t index, std::span<const double> times);

/// Online forecast from a data window (interleaved-chain rollout). Throws BlowupError.
RolloutResult rollout(const HistoryWindow& init, const ClosureTerm& closure, const ClosureConfig& cfg,
                      std::size_t horizon);
/// Same, returning the partial trajectory and divergence time instead of throwing.
RolloutResult rollout_partial(const HistoryWindow& init, const ClosureTerm& closure, const ClosureConfig& cfg,
                              std::size_t horizon);

RolloutResult rollout_instantaneous(const Vec& init, double t0, const ClosureTerm& closure, const ClosureConfig& cfg,
                                    std::size_t horizon);
RolloutResult rollout_instantaneous_partial(const Vec& init, double t0, const ClosureTerm& closure,
                                            const ClosureConfig& cfg, std::size_t horizon);

}  // namespace l96
