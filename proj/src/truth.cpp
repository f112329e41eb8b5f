#include "l96/truth.hpp"

#include <cmath>
#include <random>
#include <string>

namespace l96 {

void TruthConfig::validate() const {
  if (K < 4) throw ConfigError("truth.K must be >= 4");
  if (J < 3) throw ConfigError("truth.J must be >= 3");
  if (!(dt > 0.0)) throw ConfigError("truth.dt must be > 0");
  if (!(t_end > 0.0)) throw ConfigError("truth.t_end must be > 0");
  if (!(spinup >= 0.0)) throw ConfigError("truth.spinup must be >= 0");
  const double n = t_end / dt;
  if (std::abs(n - std::round(n)) > 1e-6) throw ConfigError("truth.t_end must be a multiple of truth.dt");
}

std::size_t TruthConfig::step_count() const { return static_cast<std::size_t>(std::llround(t_end / dt)); }

Vec FullState::flat() const {
  Vec v(x.size() + y.size());
  v << x, y;
  return v;
}

FullState FullState::from_flat(const Vec& v, std::size_t K) {
  const auto k = static_cast<Eigen::Index>(K);
  return {v.head(k), v.tail(v.size() - k)};
}

void truth_rhs_flat(const double* in, double* out, const TruthConfig& cfg) {
  const std::size_t K = cfg.K;
  const std::size_t JK = cfg.J * cfg.K;
  const double* X = in;
  const double* Y = in + K;
  double* dX = out;
  double* dY = out + K;
  const double hcb = cfg.coupling_scale();
  const double cb = cfg.c * cfg.b;

  for (std::size_t k = 0; k < K; ++k) {
    const double xm1 = X[(k + K - 1) % K];
    const double xm2 = X[(k + K - 2) % K];
    const double xp1 = X[(k + 1) % K];
    double ysum = 0.0;
    for (std::size_t j = k * cfg.J; j < (k + 1) * cfg.J; ++j) ysum += Y[j];
    dX[k] = -xm1 * (xm2 - xp1) - X[k] + cfg.F - hcb * ysum;
  }
  for (std::size_t j = 0; j < JK; ++j) {
    const double yp1 = Y[(j + 1) % JK];
    const double yp2 = Y[(j + 2) % JK];
    const double ym1 = Y[(j + JK - 1) % JK];
    dY[j] = -cb * yp1 * (yp2 - ym1) - cfg.c * Y[j] + hcb * X[j / cfg.J];
  }
}

FullState truth_rhs(const FullState& state, const TruthConfig& cfg) {
  if (static_cast<std::size_t>(state.x.size()) != cfg.K ||
      static_cast<std::size_t>(state.y.size()) != cfg.J * cfg.K) {
    throw ConfigError("truth_rhs: state dimensions do not match configuration");
  }
  const Vec in = state.flat();
  Vec out(in.size());
  truth_rhs_flat(in.data(), out.data(), cfg);
  return FullState::from_flat(out, cfg.K);
}

Vec coupling_term(const Vec& y, const TruthConfig& cfg) {
  Vec c(static_cast<Eigen::Index>(cfg.K));
  for (std::size_t k = 0; k < cfg.K; ++k) {
    c[static_cast<Eigen::Index>(k)] =
        -cfg.coupling_scale() * y.segment(static_cast<Eigen::Index>(k * cfg.J), static_cast<Eigen::Index>(cfg.J)).sum();
  }
  return c;
}

namespace {

// In-place RK4 on the flat full state with caller-owned scratch.
struct FullStepper {
  const TruthConfig& cfg;
  Vec r1, r2, r3, r4, tmp;

  explicit FullStepper(const TruthConfig& c) : cfg(c) {
    const auto n = static_cast<Eigen::Index>(c.K + c.J * c.K);
    r1.resize(n);
    r2.resize(n);
    r3.resize(n);
    r4.resize(n);
    tmp.resize(n);
  }

  void step(Vec& y, double h) {
    truth_rhs_flat(y.data(), r1.data(), cfg);
    tmp = y + (0.5 * h) * r1;
    truth_rhs_flat(tmp.data(), r2.data(), cfg);
    tmp = y + (0.5 * h) * r2;
    truth_rhs_flat(tmp.data(), r3.data(), cfg);
    tmp = y + h * r3;
    truth_rhs_flat(tmp.data(), r4.data(), cfg);
    y += (h / 6.0) * (r1 + 2.0 * r2 + 2.0 * r3 + r4);
  }
};

bool full_state_ok(const Vec& y, std::size_t K) {
  return y.allFinite() && y.head(static_cast<Eigen::Index>(K)).cwiseAbs().maxCoeff() <= kBlowupMagnitude;
}

void record(TruthTrajectory& out, std::size_t i, const Vec& y, const TruthConfig& cfg, bool keep_fast) {
  const auto K = static_cast<Eigen::Index>(cfg.K);
  const Vec fast = y.tail(y.size() - K);
  out.slow.row(static_cast<Eigen::Index>(i)) = y.head(K).transpose();
  out.coupling.row(static_cast<Eigen::Index>(i)) = coupling_term(fast, cfg).transpose();
  if (keep_fast) out.fast.row(static_cast<Eigen::Index>(i)) = fast.transpose();
}

TruthTrajectory integrate(const TruthConfig& cfg, const FullState& x0, bool keep_fast) {
  cfg.validate();
  if (static_cast<std::size_t>(x0.x.size()) != cfg.K || static_cast<std::size_t>(x0.y.size()) != cfg.J * cfg.K) {
    throw ConfigError("simulate_truth: initial state dimensions do not match configuration");
  }
  const std::size_t steps = cfg.step_count();
  const auto n = static_cast<Eigen::Index>(steps + 1);
  const auto K = static_cast<Eigen::Index>(cfg.K);

  TruthTrajectory out;
  out.dt = cfg.dt;
  out.slow.resize(n, K);
  out.coupling.resize(n, K);
  if (keep_fast) out.fast.resize(n, static_cast<Eigen::Index>(cfg.J * cfg.K));

  Vec y = x0.flat();
  if (!full_state_ok(y, cfg.K)) throw ConfigError("simulate_truth: initial state is not finite");
  out.times.push_back(0.0);
  record(out, 0, y, cfg, keep_fast);

  FullStepper stepper(cfg);
  for (std::size_t s = 1; s <= steps; ++s) {
    stepper.step(y, cfg.dt);
    if (!full_state_ok(y, cfg.K)) {
      out.blowup_step = s;
      out.blowup_time = static_cast<double>(s) * cfg.dt;
      break;
    }
    out.times.push_back(static_cast<double>(s) * cfg.dt);
    record(out, s, y, cfg, keep_fast);
  }
  const auto kept = static_cast<Eigen::Index>(out.times.size());
  if (kept < n) {
    out.slow.conservativeResize(kept, K);
    out.coupling.conservativeResize(kept, K);
    if (keep_fast) out.fast.conservativeResize(kept, out.fast.cols());
    Vec last(y.size());
    last << out.slow.row(kept - 1).transpose(),
        (keep_fast ? Vec(out.fast.row(kept - 1).transpose()) : Vec::Constant(y.size() - K, std::nan("")));
    out.final_state = FullState::from_flat(last, cfg.K);
  } else {
    out.final_state = FullState::from_flat(y, cfg.K);
  }
  return out;
}

}  // namespace

TruthTrajectory simulate_truth(const TruthConfig& cfg, const FullState& x0, bool keep_fast) {
  TruthTrajectory t = integrate(cfg, x0, keep_fast);
  if (t.blowup_step) {
    throw BlowupError("simulate_truth: state diverged at t = " + std::to_string(*t.blowup_time), *t.blowup_step,
                      *t.blowup_time);
  }
  return t;
}

TruthTrajectory simulate_truth_partial(const TruthConfig& cfg, const FullState& x0, bool keep_fast) {
  return integrate(cfg, x0, keep_fast);
}

FullState spun_up_initial_state(const TruthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> nx(0.0, cfg.init_x_std);
  std::normal_distribution<double> ny(0.0, cfg.init_y_std);
  Vec y(static_cast<Eigen::Index>(cfg.K + cfg.J * cfg.K));
  for (std::size_t i = 0; i < cfg.K; ++i) y[static_cast<Eigen::Index>(i)] = nx(rng);
  for (std::size_t i = cfg.K; i < cfg.K + cfg.J * cfg.K; ++i) y[static_cast<Eigen::Index>(i)] = ny(rng);

  FullStepper stepper(cfg);
  const auto steps = static_cast<std::size_t>(std::llround(cfg.spinup / cfg.dt));
  for (std::size_t s = 1; s <= steps; ++s) {
    stepper.step(y, cfg.dt);
    if (!full_state_ok(y, cfg.K)) {
      throw BlowupError("spin-up diverged", s, static_cast<double>(s) * cfg.dt - cfg.spinup);
    }
  }
  return FullState::from_flat(y, cfg.K);
}

void ObservationSet::validate() const {
  if (static_cast<std::size_t>(states.rows()) != times.size()) {
    throw ConfigError("observations: row count does not match time grid");
  }
  if (times.size() < 2) throw ConfigError("observations: need at least two points");
  for (std::size_t i = 1; i < times.size(); ++i) {
    const double step = times[i] - times[i - 1];
    if (std::abs(step - delta_t) > 1e-9 * std::max(1.0, std::abs(times[i]))) {
      throw ConfigError("observations: time grid spacing is not uniform");
    }
  }
  if (noise_fraction > 0.0 && (per_var_std.size() != states.cols() || (per_var_std.array() <= 0.0).any())) {
    throw ConfigError("observations: per-variable std must be positive when noise is applied");
  }
}

ObservationSet make_observations(const TruthTrajectory& traj, std::size_t stride, double noise_fraction,
                                 std::uint64_t seed) {
  if (stride < 1) throw ConfigError("observation.stride must be >= 1");
  if (!(noise_fraction >= 0.0)) throw ConfigError("observation.noise_fraction must be >= 0");
  if (traj.size() == 0) throw ConfigError("make_observations: empty trajectory");

  const std::size_t n = (traj.size() - 1) / stride + 1;
  const auto K = traj.slow.cols();
  ObservationSet obs;
  obs.stride = stride;
  obs.delta_t = traj.dt * static_cast<double>(stride);
  obs.noise_fraction = noise_fraction;
  obs.seed = seed;
  obs.states.resize(static_cast<Eigen::Index>(n), K);
  obs.times.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    obs.times.push_back(traj.times[i * stride]);
    obs.states.row(static_cast<Eigen::Index>(i)) = traj.slow.row(static_cast<Eigen::Index>(i * stride));
  }

  const RowVec mean = obs.states.colwise().mean();
  obs.per_var_std = ((obs.states.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(n))
                        .sqrt()
                        .transpose();

  if (noise_fraction > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (Eigen::Index i = 0; i < obs.states.rows(); ++i) {
      for (Eigen::Index k = 0; k < K; ++k) obs.states(i, k) += noise_fraction * obs.per_var_std[k] * unit(rng);
    }
  }
  return obs;
}

double estimate_max_lyapunov(const TruthConfig& cfg, const LyapunovOptions& opts) {
  cfg.validate();
  if (!(opts.renorm_interval > 0.0) || !(opts.perturbation > 0.0) || !(opts.averaging > 0.0)) {
    throw ConfigError("lyapunov: interval, perturbation and averaging window must be positive");
  }
  const std::size_t per_renorm = std::max<std::size_t>(1, std::llround(opts.renorm_interval / cfg.dt));
  const double tau = static_cast<double>(per_renorm) * cfg.dt;
  const auto transient_blocks = static_cast<std::size_t>(std::llround(opts.transient / tau));
  const auto avg_blocks = static_cast<std::size_t>(std::ceil(opts.averaging / tau));
  const auto K = static_cast<Eigen::Index>(cfg.K);

  Vec a = spun_up_initial_state(cfg).flat();
  Vec b = a;
  {
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> unit(0.0, 1.0);
    Vec dir(K);
    for (Eigen::Index k = 0; k < K; ++k) dir[k] = unit(rng);
    b.head(K) += opts.perturbation * dir / dir.norm();
  }

  FullStepper sa(cfg);
  FullStepper sb(cfg);
  double log_sum = 0.0;
  std::size_t step = 0;
  for (std::size_t blk = 0; blk < transient_blocks + avg_blocks; ++blk) {
    for (std::size_t s = 0; s < per_renorm; ++s) {
      sa.step(a, cfg.dt);
      sb.step(b, cfg.dt);
      ++step;
    }
    if (!full_state_ok(a, cfg.K) || !full_state_ok(b, cfg.K)) {
      throw BlowupError("lyapunov: trajectory diverged", step, static_cast<double>(step) * cfg.dt);
    }
    const double d = (b.head(K) - a.head(K)).norm();
    if (!(d > 0.0)) throw BlowupError("lyapunov: perturbation collapsed to zero", step, static_cast<double>(step) * cfg.dt);
    if (blk >= transient_blocks) log_sum += std::log(d / opts.perturbation);
    b = a + (b - a) * (opts.perturbation / d);
  }
  return log_sum / (static_cast<double>(avg_blocks) * tau);
}

}  // namespace l96
