#include "l96/closure.hpp"

#include <cmath>
#include <string>

namespace l96 {

std::string to_string(Variant v) { return v == Variant::History ? "history" : "instantaneous"; }

Variant variant_from_string(const std::string& s) {
  if (s == "history") return Variant::History;
  if (s == "instantaneous") return Variant::Instantaneous;
  throw ConfigError("unknown closure variant '" + s + "' (expected history or instantaneous)");
}

std::string to_string(InputMode m) { return m == InputMode::SiteLocal ? "site_local" : "full_state"; }

InputMode input_mode_from_string(const std::string& s) {
  if (s == "site_local") return InputMode::SiteLocal;
  if (s == "full_state") return InputMode::FullState;
  throw ConfigError("unknown closure input mode '" + s + "' (expected site_local or full_state)");
}

void HistoryConfig::validate() const {
  if (n_h < 1) throw ConfigError("closure.n_h must be >= 1");
  if (!(delta_t > 0.0)) throw ConfigError("closure.delta_t must be > 0");
}

void ClosureConfig::validate() const {
  if (K < 4) throw ConfigError("closure: K must be >= 4");
  if (variant == Variant::History) {
    history.validate();
  } else if (!(history.delta_t > 0.0)) {
    throw ConfigError("closure.delta_t must be > 0");
  }
}

std::size_t ClosureConfig::network_input_dim() const {
  const std::size_t per_site = lag_count() + 1;
  return input_mode == InputMode::SiteLocal ? per_site : per_site * K;
}

void ClosureTerm::backward(const StageTape&, const Mat&, std::span<double>, Mat&, std::span<Mat>) const {
  throw GradientError("closure term does not support differentiation");
}

// ---------------------------------------------------------------------------
// Network closure

NetworkClosure::NetworkClosure(const ClosureParams& params, const ClosureConfig& cfg)
    : params_(params), mode_(cfg.input_mode), K_(cfg.K), lags_(cfg.lag_count()) {
  if (params.arch.input_dim != cfg.network_input_dim() || params.arch.output_dim != 1) {
    throw ConfigError("network closure: architecture expects input_dim " + std::to_string(params.arch.input_dim) +
                      ", configuration needs " + std::to_string(cfg.network_input_dim()) + " and output_dim 1");
  }
}

void NetworkClosure::evaluate(const Mat& current, std::span<const Mat* const> lags, std::span<const double>, Mat& out,
                              StageTape* tape) const {
  if (lags.size() != lags_) throw ConfigError("network closure: wrong number of lagged states");
  const Eigen::Index B = current.rows();
  const Eigen::Index K = current.cols();
  if (static_cast<std::size_t>(K) != K_) throw ConfigError("network closure: state width does not match K");
  const Eigen::Index width = mode_ == InputMode::SiteLocal ? 1 : K;
  Mat in(B * K, static_cast<Eigen::Index>(lags_ + 1) * width);
  for (std::size_t s = 0; s <= lags_; ++s) {
    const Mat& src = s == 0 ? current : *lags[s - 1];
    const Eigen::Index col0 = static_cast<Eigen::Index>(s) * width;
    for (Eigen::Index b = 0; b < B; ++b) {
      for (Eigen::Index k = 0; k < K; ++k) {
        for (Eigen::Index o = 0; o < width; ++o) in(b * K + k, col0 + o) = src(b, (k + o) % K);
      }
    }
  }
  const Mat p = mlp_forward_batch(params_, in, tape ? &tape->mlp : nullptr);
  out = Eigen::Map<const Mat>(p.data(), B, K);
}

void NetworkClosure::backward(const StageTape& tape, const Mat& d_out, std::span<double> grad, Mat& d_current,
                              std::span<Mat> d_lags) const {
  const Eigen::Index B = d_out.rows();
  const Eigen::Index K = d_out.cols();
  const Eigen::Index width = mode_ == InputMode::SiteLocal ? 1 : K;
  const Mat dp = Eigen::Map<const Mat>(d_out.data(), B * K, 1);
  Mat d_in;
  mlp_backward(params_, tape.mlp, dp, grad, &d_in);
  for (std::size_t s = 0; s <= lags_; ++s) {
    Mat& dst = s == 0 ? d_current : d_lags[s - 1];
    dst.setZero(B, K);
    const Eigen::Index col0 = static_cast<Eigen::Index>(s) * width;
    for (Eigen::Index b = 0; b < B; ++b) {
      for (Eigen::Index k = 0; k < K; ++k) {
        for (Eigen::Index o = 0; o < width; ++o) dst(b, (k + o) % K) += d_in(b * K + k, col0 + o);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Coupling lookup

CouplingLookupClosure::CouplingLookupClosure(double t0, double dt, Mat coupling)
    : t0_(t0), dt_(dt), coupling_(std::move(coupling)) {
  if (!(dt_ > 0.0)) throw ConfigError("coupling lookup: dt must be > 0");
}

void CouplingLookupClosure::evaluate(const Mat& current, std::span<const Mat* const>, std::span<const double> times,
                                     Mat& out, StageTape*) const {
  out.resize(current.rows(), current.cols());
  for (Eigen::Index b = 0; b < current.rows(); ++b) {
    const double t = times[static_cast<std::size_t>(b)];
    const double pos = (t - t0_) / dt_;
    const auto idx = static_cast<Eigen::Index>(std::llround(pos));
    if (std::abs(pos - static_cast<double>(idx)) > 1e-6 || idx < 0 || idx >= coupling_.rows()) {
      throw ConfigError("coupling lookup: time " + std::to_string(t) + " is not on the stored grid");
    }
    out.row(b) = coupling_.row(idx);
  }
}

// ---------------------------------------------------------------------------
// Right-hand sides

Mat slow_advection(const Mat& x, double forcing) {
  const Eigen::Index K = x.cols();
  Mat out(x.rows(), K);
  for (Eigen::Index b = 0; b < x.rows(); ++b) {
    for (Eigen::Index k = 0; k < K; ++k) {
      out(b, k) = -x(b, (k + K - 1) % K) * (x(b, (k + K - 2) % K) - x(b, (k + 1) % K)) - x(b, k) + forcing;
    }
  }
  return out;
}

Vec slow_advection(const Vec& x, double forcing) {
  const Mat row = x.transpose();
  return slow_advection(row, forcing).row(0).transpose();
}

namespace {

// Accumulates the transpose Jacobian of slow_advection at x applied to g into dx.
void advection_backward(const Mat& x, const Mat& g, Mat& dx) {
  const Eigen::Index K = x.cols();
  for (Eigen::Index b = 0; b < x.rows(); ++b) {
    for (Eigen::Index k = 0; k < K; ++k) {
      const Eigen::Index km1 = (k + K - 1) % K;
      const Eigen::Index km2 = (k + K - 2) % K;
      const Eigen::Index kp1 = (k + 1) % K;
      const double gk = g(b, k);
      dx(b, km1) -= (x(b, km2) - x(b, kp1)) * gk;
      dx(b, km2) -= x(b, km1) * gk;
      dx(b, kp1) += x(b, km1) * gk;
      dx(b, k) -= gk;
    }
  }
}

Mat rhs(const ClosureTerm& closure, double forcing, const Mat& s, const std::vector<const Mat*>& lags,
        std::span<const double> times, StageTape* tape) {
  Mat p;
  closure.evaluate(s, lags, times, p, tape);
  return slow_advection(s, forcing) + p;
}

// d(rhs)/d(inputs) applied to df; returns d/ds and writes lag adjoints.
Mat rhs_backward(const ClosureTerm& closure, const Mat& s, const StageTape& tape, const Mat& df, std::size_t n_lags,
                 std::span<double> grad, std::vector<Mat>& d_lags) {
  Mat ds;
  d_lags.resize(n_lags);
  closure.backward(tape, df, grad, ds, d_lags);
  advection_backward(s, df, ds);
  return ds;
}

std::vector<double> shifted(std::span<const double> t, double by) {
  std::vector<double> out(t.begin(), t.end());
  for (double& v : out) v += by;
  return out;
}

}  // namespace

Vec closure_rhs_hist(const Vec& current, std::span<const Vec> lags, const ClosureParams& params,
                     const ClosureConfig& cfg) {
  if (lags.size() != cfg.lag_count()) throw ConfigError("closure_rhs_hist: expected " + std::to_string(cfg.lag_count()) + " lagged states");
  if (static_cast<std::size_t>(current.size()) != cfg.K) throw ConfigError("closure_rhs_hist: state width does not match K");
  const NetworkClosure net(params, cfg);
  const Mat cur = current.transpose();
  std::vector<Mat> lag_rows;
  for (const Vec& l : lags) {
    if (l.size() != current.size()) throw ConfigError("closure_rhs_hist: lagged state width mismatch");
    lag_rows.emplace_back(l.transpose());
  }
  std::vector<const Mat*> ptrs;
  for (const Mat& m : lag_rows) ptrs.push_back(&m);
  const double t = 0.0;
  return rhs(net, cfg.forcing, cur, ptrs, std::span<const double>(&t, 1), nullptr).row(0).transpose();
}

Mat closure_rk4_step(const ClosureTerm& closure, double forcing, const Mat& anchor, const StageLags& lags, double h,
                     std::span<const double> t_anchor, StepTape* tape) {
  if (t_anchor.size() != static_cast<std::size_t>(anchor.rows())) {
    throw ConfigError("closure_rk4_step: one anchor time per batch row required");
  }
  const std::vector<double> t_mid = shifted(t_anchor, 0.5 * h);
  const std::vector<double> t_end = shifted(t_anchor, h);

  const Mat r1 = h * rhs(closure, forcing, anchor, lags.r1, t_anchor, tape ? &tape->t1 : nullptr);
  Mat s2 = anchor + 0.5 * r1;
  const Mat r2 = h * rhs(closure, forcing, s2, lags.mid, t_mid, tape ? &tape->t2 : nullptr);
  Mat s3 = anchor + 0.5 * r2;
  const Mat r3 = h * rhs(closure, forcing, s3, lags.mid, t_mid, tape ? &tape->t3 : nullptr);
  Mat s4 = anchor + r3;
  const Mat r4 = h * rhs(closure, forcing, s4, lags.r4, t_end, tape ? &tape->t4 : nullptr);

  if (tape) {
    tape->s1 = anchor;
    tape->s2 = std::move(s2);
    tape->s3 = std::move(s3);
    tape->s4 = std::move(s4);
    tape->n_r1 = lags.r1.size();
    tape->n_mid = lags.mid.size();
    tape->n_r4 = lags.r4.size();
  }
  return anchor + (r1 + 2.0 * r2 + 2.0 * r3 + r4) / 6.0;
}

void closure_rk4_step_backward(const ClosureTerm& closure, double /*forcing*/, double h, const StepTape& tape,
                               const Mat& d_out, std::span<double> grad, Mat& d_anchor, StageLagGrads& d_lags) {
  Mat dr1 = d_out / 6.0;
  Mat dr2 = d_out / 3.0;
  Mat dr3 = d_out / 3.0;
  const Mat dr4 = d_out / 6.0;
  d_anchor = d_out;

  std::vector<Mat> mid3;
  const Mat ds4 = rhs_backward(closure, tape.s4, tape.t4, h * dr4, tape.n_r4, grad, d_lags.r4);
  d_anchor += ds4;
  dr3 += ds4;

  const Mat ds3 = rhs_backward(closure, tape.s3, tape.t3, h * dr3, tape.n_mid, grad, mid3);
  d_anchor += ds3;
  dr2 += 0.5 * ds3;

  const Mat ds2 = rhs_backward(closure, tape.s2, tape.t2, h * dr2, tape.n_mid, grad, d_lags.mid);
  d_anchor += ds2;
  dr1 += 0.5 * ds2;
  for (std::size_t i = 0; i < mid3.size(); ++i) d_lags.mid[i] += mid3[i];

  const Mat ds1 = rhs_backward(closure, tape.s1, tape.t1, h * dr1, tape.n_r1, grad, d_lags.r1);
  d_anchor += ds1;
}

// ---------------------------------------------------------------------------
// Single steps

Vec dde_rk4_step(const Mat& newest_first, const ClosureTerm& closure, const ClosureConfig& cfg, double t) {
  if (cfg.variant != Variant::History) throw ConfigError("dde_rk4_step: configuration is not the history variant");
  const std::size_t n_h = cfg.history.n_h;
  if (static_cast<std::size_t>(newest_first.rows()) < 2 * n_h + 1 ||
      static_cast<std::size_t>(newest_first.cols()) != cfg.K) {
    throw ConfigError("dde_rk4_step: window needs at least 2 n_h + 1 rows of width K");
  }
  std::vector<Mat> rows;
  rows.reserve(2 * n_h + 1);
  for (std::size_t i = 0; i <= 2 * n_h; ++i) rows.emplace_back(newest_first.row(static_cast<Eigen::Index>(i)));
  StageLags lags;
  for (std::size_t i = 1; i <= n_h; ++i) {
    lags.r1.push_back(&rows[2 * i]);
    lags.mid.push_back(&rows[2 * i - 1]);
    lags.r4.push_back(&rows[2 * (i - 1)]);
  }
  const Mat out = closure_rk4_step(closure, cfg.forcing, rows[0], lags, cfg.step(), std::span<const double>(&t, 1), nullptr);
  if (!state_ok(out)) throw BlowupError("dde_rk4_step: non-finite state", 0, t + cfg.step());
  return out.row(0).transpose();
}

Vec dde_rk4_step(const Mat& newest_first, const ClosureParams& params, const ClosureConfig& cfg) {
  return dde_rk4_step(newest_first, NetworkClosure(params, cfg), cfg);
}

Vec ode_rk4_step(const Vec& state, const ClosureTerm& closure, const ClosureConfig& cfg, double t) {
  if (cfg.variant != Variant::Instantaneous) throw ConfigError("ode_rk4_step: configuration is not the instantaneous variant");
  if (static_cast<std::size_t>(state.size()) != cfg.K) throw ConfigError("ode_rk4_step: state width does not match K");
  const Mat row = state.transpose();
  const Mat out = closure_rk4_step(closure, cfg.forcing, row, StageLags{}, cfg.step(), std::span<const double>(&t, 1), nullptr);
  if (!state_ok(out)) throw BlowupError("ode_rk4_step: non-finite state", 0, t + cfg.step());
  return out.row(0).transpose();
}

Vec ode_rk4_step(const Vec& state, const ClosureParams& params, const ClosureConfig& cfg) {
  return ode_rk4_step(state, NetworkClosure(params, cfg), cfg);
}

void HistoryWindow::validate(const ClosureConfig& cfg) const {
  if (static_cast<std::size_t>(states.rows()) != cfg.window_length() || static_cast<std::size_t>(states.cols()) != cfg.K) {
    throw ConfigError("history window must hold " + std::to_string(cfg.window_length()) + " states of width " +
                      std::to_string(cfg.K));
  }
  if (!states.allFinite()) throw ConfigError("history window contains non-finite values");
}

// ---------------------------------------------------------------------------
// Rollouts

BatchRollout::BatchRollout(const ClosureTerm& closure, const ClosureConfig& cfg) : closure_(closure), cfg_(cfg) {
  cfg_.validate();
}

BatchRollout::LagIndices BatchRollout::lag_indices(std::size_t target) const {
  LagIndices idx;
  idx.anchor = target - cfg_.anchor_offset();
  if (cfg_.variant == Variant::History) {
    for (std::size_t i = 1; i <= cfg_.history.n_h; ++i) {
      idx.r1.push_back(idx.anchor - 2 * i);
      idx.mid.push_back(idx.anchor - (2 * i - 1));
      idx.r4.push_back(idx.anchor - 2 * (i - 1));
    }
  }
  return idx;
}

void BatchRollout::run(std::vector<Mat>& buffer, std::span<const double> t_oldest, std::size_t horizon,
                       bool keep_tape) {
  window_ = buffer.size();
  first_emitted_ = window_;
  tapes_.clear();
  blowup_.reset();
  if (window_ < cfg_.window_length()) throw ConfigError("rollout: initial buffer is shorter than the required window");
  if (t_oldest.size() != static_cast<std::size_t>(buffer[0].rows())) throw ConfigError("rollout: one start time per batch row required");
  buffer.reserve(window_ + horizon);
  if (keep_tape) tapes_.reserve(horizon);

  const double dt = cfg_.history.delta_t;
  std::vector<double> t_anchor(t_oldest.size());
  for (std::size_t s = 0; s < horizon; ++s) {
    const std::size_t n = buffer.size();
    const LagIndices idx = lag_indices(n);
    StageLags lags;
    for (auto i : idx.r1) lags.r1.push_back(&buffer[i]);
    for (auto i : idx.mid) lags.mid.push_back(&buffer[i]);
    for (auto i : idx.r4) lags.r4.push_back(&buffer[i]);
    for (std::size_t b = 0; b < t_oldest.size(); ++b) t_anchor[b] = t_oldest[b] + static_cast<double>(idx.anchor) * dt;
    StepTape* tape = keep_tape ? &tapes_.emplace_back() : nullptr;
    Mat next = closure_rk4_step(closure_, cfg_.forcing, buffer[idx.anchor], lags, cfg_.step(), t_anchor, tape);
    if (!state_ok(next)) {
      blowup_ = n;
      if (keep_tape) tapes_.pop_back();
      break;
    }
    buffer.push_back(std::move(next));
  }
}

void BatchRollout::backward(std::vector<Mat>& d_buffer, std::span<double> grad) const {
  if (d_buffer.size() != first_emitted_ + tapes_.size()) {
    throw GradientError("rollout backward: adjoint buffer does not match the taped rollout");
  }
  Mat d_anchor;
  StageLagGrads d_lags;
  for (std::size_t s = tapes_.size(); s-- > 0;) {
    const std::size_t n = first_emitted_ + s;
    const LagIndices idx = lag_indices(n);
    closure_rk4_step_backward(closure_, cfg_.forcing, cfg_.step(), tapes_[s], d_buffer[n], grad, d_anchor, d_lags);
    d_buffer[idx.anchor] += d_anchor;
    for (std::size_t i = 0; i < idx.r1.size(); ++i) d_buffer[idx.r1[i]] += d_lags.r1[i];
    for (std::size_t i = 0; i < idx.mid.size(); ++i) d_buffer[idx.mid[i]] += d_lags.mid[i];
    for (std::size_t i = 0; i < idx.r4.size(); ++i) d_buffer[idx.r4[i]] += d_lags.r4[i];
  }
}

Mat closure_along(const ClosureTerm& closure, const ClosureConfig& cfg, const std::vector<Mat>& buffer,
                  std::size_t index, std::span<const double> times) {
  std::vector<const Mat*> lags;
  for (std::size_t i = 1; i <= cfg.lag_count(); ++i) {
    if (index < 2 * i) throw ConfigError("closure_along: not enough history before the requested index");
    lags.push_back(&buffer[index - 2 * i]);
  }
  Mat p;
  closure.evaluate(buffer[index], lags, times, p, nullptr);
  return p;
}

namespace {

RolloutResult run_single(std::vector<Mat> buffer, double t_oldest, const ClosureTerm& closure,
                         const ClosureConfig& cfg, std::size_t horizon) {
  BatchRollout engine(closure, cfg);
  engine.run(buffer, std::span<const double>(&t_oldest, 1), horizon, false);
  const std::size_t first = cfg.window_length();
  const std::size_t emitted = buffer.size() - first;
  const double dt = cfg.history.delta_t;

  RolloutResult out;
  out.states.resize(static_cast<Eigen::Index>(emitted), static_cast<Eigen::Index>(cfg.K));
  out.closures.resize(static_cast<Eigen::Index>(emitted), static_cast<Eigen::Index>(cfg.K));
  for (std::size_t i = 0; i < emitted; ++i) {
    const std::size_t n = first + i;
    const double t = t_oldest + static_cast<double>(n) * dt;
    out.times.push_back(t);
    out.states.row(static_cast<Eigen::Index>(i)) = buffer[n].row(0);
    out.closures.row(static_cast<Eigen::Index>(i)) =
        closure_along(closure, cfg, buffer, n, std::span<const double>(&t, 1)).row(0);
  }
  if (engine.blowup_index()) {
    out.blowup_step = *engine.blowup_index() - first;
    out.blowup_time = t_oldest + static_cast<double>(*engine.blowup_index()) * dt;
  }
  return out;
}

void throw_if_blown_up(const RolloutResult& r) {
  if (r.blowup_step) {
    throw BlowupError("rollout diverged at t = " + std::to_string(*r.blowup_time), *r.blowup_step, *r.blowup_time);
  }
}

}  // namespace

RolloutResult rollout_partial(const HistoryWindow& init, const ClosureTerm& closure, const ClosureConfig& cfg,
                              std::size_t horizon) {
  if (cfg.variant != Variant::History) throw ConfigError("rollout: configuration is not the history variant");
  if (horizon < 1) throw ConfigError("rollout: horizon must be >= 1");
  init.validate(cfg);
  const auto L = init.states.rows();
  std::vector<Mat> buffer;
  for (Eigen::Index i = L; i-- > 0;) buffer.emplace_back(init.states.row(i));
  const double t_oldest = init.t_newest - static_cast<double>(L - 1) * cfg.history.delta_t;
  return run_single(std::move(buffer), t_oldest, closure, cfg, horizon);
}

RolloutResult rollout(const HistoryWindow& init, const ClosureTerm& closure, const ClosureConfig& cfg,
                      std::size_t horizon) {
  RolloutResult r = rollout_partial(init, closure, cfg, horizon);
  throw_if_blown_up(r);
  return r;
}

RolloutResult rollout_instantaneous_partial(const Vec& init, double t0, const ClosureTerm& closure,
                                            const ClosureConfig& cfg, std::size_t horizon) {
  if (cfg.variant != Variant::Instantaneous) throw ConfigError("rollout_instantaneous: configuration is not the instantaneous variant");
  if (horizon < 1) throw ConfigError("rollout: horizon must be >= 1");
  if (static_cast<std::size_t>(init.size()) != cfg.K || !init.allFinite()) {
    throw ConfigError("rollout_instantaneous: initial state must be finite with width K");
  }
  std::vector<Mat> buffer{Mat(init.transpose())};
  return run_single(std::move(buffer), t0, closure, cfg, horizon);
}

RolloutResult rollout_instantaneous(const Vec& init, double t0, const ClosureTerm& closure, const ClosureConfig& cfg,
                                    std::size_t horizon) {
  RolloutResult r = rollout_instantaneous_partial(init, t0, closure, cfg, horizon);
  throw_if_blown_up(r);
  return r;
}

}  // namespace l96
