#include "l96/train.hpp"

#include "l96/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace l96 {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (n_f < 1) throw ConfigError("train.n_f must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("train.adam_beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("train.adam_beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be > 0");
  if (divergence_patience < 1) throw ConfigError("train.divergence_patience must be >= 1");
}

namespace {

constexpr std::size_t kChunk = 128;

std::size_t ticks_for(const ClosureConfig& cfg, std::size_t n_f) {
  return cfg.variant == Variant::History ? 2 * n_f : n_f;
}

struct SseResult {
  double sse = 0.0;
  std::size_t count = 0;
  bool blowup = false;
  std::string diagnostic;
};

// Rolls out `ticks` entries from every start row (window rows start .. start + W - 1) and
// sums squared errors against the observation rows at the emitted times. When `grad` is
// non-empty, accumulates scale * d(sse)/d(theta).
SseResult rollout_sse(const ClosureTerm& closure, const ObservationSet& obs, std::span<const std::size_t> starts,
                      std::size_t ticks, const ClosureConfig& cfg, std::span<double> grad, double scale) {
  cfg.validate();
  if (obs.K() != cfg.K) throw ConfigError("observations have " + std::to_string(obs.K()) + " variables, closure expects " + std::to_string(cfg.K));
  const bool want_grad = !grad.empty();
  if (want_grad && !closure.differentiable()) throw GradientError("closure is not differentiable");
  if (want_grad && grad.size() != closure.parameter_count()) throw ConfigError("gradient buffer has the wrong size");
  const std::size_t W = cfg.window_length();
  const std::size_t n = obs.size();
  for (std::size_t j : starts) {
    if (j + W + ticks > n) {
      throw ConfigError("training sample starting at row " + std::to_string(j) + " does not fit inside the " +
                        std::to_string(n) + "-point observation grid");
    }
  }
  const auto K = static_cast<Eigen::Index>(cfg.K);
  const std::size_t n_chunks = (starts.size() + kChunk - 1) / kChunk;

  struct Chunk {
    double sse = 0.0;
    bool blowup = false;
    double blowup_time = 0.0;
    std::size_t blowup_start = 0;
    std::vector<double> grad;
  };
  std::vector<Chunk> chunks(n_chunks);

  parallel_for(n_chunks, [&](std::size_t c) {
    Chunk& out = chunks[c];
    const std::size_t lo = c * kChunk;
    const std::size_t hi = std::min(starts.size(), lo + kChunk);
    const auto B = static_cast<Eigen::Index>(hi - lo);
    std::vector<Mat> buffer(W, Mat(B, K));
    std::vector<double> t_oldest(static_cast<std::size_t>(B));
    for (Eigen::Index b = 0; b < B; ++b) {
      const std::size_t j = starts[lo + static_cast<std::size_t>(b)];
      t_oldest[static_cast<std::size_t>(b)] = obs.times[j];
      for (std::size_t i = 0; i < W; ++i) buffer[i].row(b) = obs.states.row(static_cast<Eigen::Index>(j + i));
    }
    BatchRollout engine(closure, cfg);
    engine.run(buffer, t_oldest, ticks, want_grad);
    if (engine.blowup_index()) {
      out.blowup = true;
      out.blowup_start = starts[lo];
      out.blowup_time = t_oldest[0] + static_cast<double>(*engine.blowup_index()) * cfg.history.delta_t;
      return;
    }
    std::vector<Mat> d_buffer;
    if (want_grad) d_buffer.assign(buffer.size(), Mat::Zero(B, K));
    for (std::size_t e = W; e < buffer.size(); ++e) {
      Mat diff(B, K);
      for (Eigen::Index b = 0; b < B; ++b) {
        const std::size_t row = starts[lo + static_cast<std::size_t>(b)] + e;
        diff.row(b) = buffer[e].row(b) - obs.states.row(static_cast<Eigen::Index>(row));
      }
      out.sse += diff.squaredNorm();
      if (want_grad) d_buffer[e] = (2.0 * scale) * diff;
    }
    if (want_grad) {
      out.grad.assign(grad.size(), 0.0);
      engine.backward(d_buffer, out.grad);
    }
  });

  SseResult res;
  res.count = starts.size() * ticks * cfg.K;
  for (const Chunk& ch : chunks) {
    if (ch.blowup && !res.blowup) {
      res.blowup = true;
      std::ostringstream msg;
      msg << "rollout blew up at t = " << ch.blowup_time << " in the chunk starting at observation row "
          << ch.blowup_start;
      res.diagnostic = msg.str();
    }
    res.sse += ch.sse;
  }
  if (want_grad && !res.blowup) {
    for (const Chunk& ch : chunks) {
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += ch.grad[i];
    }
  }
  return res;
}

}  // namespace

std::vector<std::size_t> valid_starts(const ObservationSet& obs, const ClosureConfig& cfg, std::size_t n_f) {
  const std::size_t need = cfg.window_length() + ticks_for(cfg, n_f);
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j + need <= obs.size(); ++j) out.push_back(j);
  return out;
}

LossResult rollout_loss(const ClosureTerm& closure, const ObservationSet& obs, std::span<const std::size_t> batch,
                        std::size_t n_f, const ClosureConfig& cfg, std::span<double> grad) {
  if (batch.empty()) throw ConfigError("loss: empty batch");
  if (n_f < 1) throw ConfigError("loss: n_f must be >= 1");
  const std::size_t ticks = ticks_for(cfg, n_f);
  const double denom = static_cast<double>(batch.size() * ticks * cfg.K);
  const SseResult r = rollout_sse(closure, obs, batch, ticks, cfg, grad, 1.0 / denom);
  LossResult out;
  if (r.blowup) {
    out.value = kBlowupLoss;
    out.blowup = true;
    out.diagnostic = r.diagnostic;
  } else {
    out.value = r.sse / denom;
  }
  return out;
}

LossResult loss_history(const ClosureParams& params, const ObservationSet& obs, std::span<const std::size_t> batch,
                        std::size_t n_f, const ClosureConfig& cfg, std::span<double> grad) {
  if (cfg.variant != Variant::History) throw ConfigError("loss_history: configuration is not the history variant");
  return rollout_loss(NetworkClosure(params, cfg), obs, batch, n_f, cfg, grad);
}

LossResult loss_instantaneous(const ClosureParams& params, const ObservationSet& obs,
                              std::span<const std::size_t> batch, std::size_t n_f, const ClosureConfig& cfg,
                              std::span<double> grad) {
  if (cfg.variant != Variant::Instantaneous) {
    throw ConfigError("loss_instantaneous: configuration is not the instantaneous variant");
  }
  return rollout_loss(NetworkClosure(params, cfg), obs, batch, n_f, cfg, grad);
}

std::vector<std::size_t> one_step_targets(const ObservationSet& obs, const ClosureConfig& cfg) {
  std::vector<std::size_t> out;
  for (std::size_t m = cfg.window_length(); m < obs.size(); ++m) out.push_back(m);
  return out;
}

OneStepFit one_step_fit_rows(const ClosureTerm& closure, const ObservationSet& obs, const ClosureConfig& cfg,
                             std::span<const std::size_t> targets, std::span<double> grad, double grad_scale) {
  const std::size_t W = cfg.window_length();
  std::vector<std::size_t> starts;
  starts.reserve(targets.size());
  for (std::size_t m : targets) {
    if (m < W) throw ConfigError("one-step target row " + std::to_string(m) + " has no full data window");
    starts.push_back(m - W);
  }
  const SseResult r = rollout_sse(closure, obs, starts, 1, cfg, grad, grad_scale);
  return OneStepFit{r.sse, r.count, r.blowup};
}

OneStepFit one_step_fit(const ClosureTerm& closure, const ObservationSet& obs, const ClosureConfig& cfg,
                        std::span<double> grad, double grad_scale) {
  const std::vector<std::size_t> targets = one_step_targets(obs, cfg);
  if (targets.empty()) throw ConfigError("observation grid is too short for a single one-step target");
  return one_step_fit_rows(closure, obs, cfg, targets, grad, grad_scale);
}

Adam::Adam(std::size_t n, double lr_, double b1, double b2, double e)
    : lr(lr_), beta1(b1), beta2(b2), eps(e), m(n, 0.0), v(n, 0.0) {}

void Adam::step(std::span<double> x, std::span<const double> g) {
  if (x.size() != m.size() || g.size() != m.size()) throw ConfigError("adam: size mismatch");
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < x.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
  }
}

MlpArchitecture closure_architecture(const ClosureConfig& cfg, std::size_t hidden_layers, std::size_t hidden_width,
                                     Activation activation) {
  MlpArchitecture a;
  a.input_dim = cfg.network_input_dim();
  a.hidden_layers = hidden_layers;
  a.hidden_width = hidden_width;
  a.output_dim = 1;
  a.activation = activation;
  a.validate();
  return a;
}

TrainReport adam_train(const ObservationSet& obs, const ClosureParams& init, const ClosureConfig& ccfg,
                       const TrainConfig& tcfg) {
  tcfg.validate();
  ccfg.validate();
  obs.validate();
  TrainReport report;
  ClosureParams params = init;
  if (params.arch.input_dim != ccfg.network_input_dim()) throw ConfigError("train: network input does not match the closure");
  for (double v : params.flat) {
    if (!std::isfinite(v)) throw ConfigError("train: initial parameters are not finite");
  }
  Adam opt(params.size(), tcfg.learning_rate, tcfg.adam_beta1, tcfg.adam_beta2, tcfg.adam_eps);
  std::mt19937_64 rng(tcfg.seed);
  std::vector<double> grad(params.size());
  std::size_t streak = 0;
  report.phase1_iters = tcfg.phase1_iters;

  for (int phase = 1; phase <= 2; ++phase) {
    const std::size_t n_f = phase == 1 ? 1 : tcfg.n_f;
    const std::size_t iters = phase == 1 ? tcfg.phase1_iters : tcfg.phase2_iters;
    if (iters == 0) continue;
    std::vector<std::size_t> order = valid_starts(obs, ccfg, n_f);
    if (order.empty()) throw ConfigError("train: observation grid too short for n_f = " + std::to_string(n_f));
    const std::size_t B = std::min(tcfg.batch_size, order.size());
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t pos = 0;
    for (std::size_t it = 0; it < iters; ++it) {
      if (pos + B > order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        pos = 0;
      }
      const std::span<const std::size_t> batch(order.data() + pos, B);
      pos += B;
      std::fill(grad.begin(), grad.end(), 0.0);
      LossResult r = rollout_loss(NetworkClosure(params, ccfg), obs, batch, n_f, ccfg, grad);
      if (!r.blowup && !std::all_of(grad.begin(), grad.end(), [](double g) { return std::isfinite(g); })) {
        r.blowup = true;
        r.value = kBlowupLoss;
        r.diagnostic = "non-finite gradient";
        std::fill(grad.begin(), grad.end(), 0.0);
      }
      if (r.blowup) {
        ++report.blowup_batches;
        if (report.diagnostics.size() < 20) {
          report.diagnostics.push_back("phase " + std::to_string(phase) + " iteration " + std::to_string(it) + ": " +
                                       r.diagnostic);
        }
      }
      report.loss_curve.push_back(r.value);
      streak = r.value > tcfg.divergence_threshold ? streak + 1 : 0;
      if (streak >= tcfg.divergence_patience) {
        std::ostringstream msg;
        msg << "training diverged: loss above " << tcfg.divergence_threshold << " for " << streak
            << " consecutive iterations (phase " << phase << ", iteration " << it << ")";
        if (!r.diagnostic.empty()) msg << "; last: " << r.diagnostic;
        throw TrainingDiverged(msg.str());
      }
      opt.step(params.flat, grad);
    }
  }

  const OneStepFit fit = one_step_fit(NetworkClosure(params, ccfg), obs, ccfg);
  if (fit.blowup) throw TrainingDiverged("trained closure blows up within a single step");
  const OneStepFit zero = one_step_fit(ZeroClosure(), obs, ccfg);
  report.residual_variance = fit.ssr / static_cast<double>(fit.count);
  report.one_step_rmse = std::sqrt(report.residual_variance);
  report.zero_closure_one_step_rmse = zero.blowup ? INFINITY : std::sqrt(zero.ssr / static_cast<double>(zero.count));
  report.final_params = std::move(params);
  return report;
}

}  // namespace l96
