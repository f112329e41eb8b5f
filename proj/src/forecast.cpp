#include "l96/forecast.hpp"

#include "l96/parallel.hpp"

#include <cmath>
#include <random>

namespace l96 {

HistoryWindow window_at(const ObservationSet& obs, std::size_t newest_row, std::size_t length) {
  if (length < 1 || newest_row >= obs.size() || newest_row + 1 < length) {
    throw ConfigError("window_at: rows " + std::to_string(newest_row + 1 - std::min(length, newest_row + 1)) + ".." +
                      std::to_string(newest_row) + " do not fit the observation grid");
  }
  HistoryWindow w;
  w.states.resize(static_cast<Eigen::Index>(length), obs.states.cols());
  for (std::size_t i = 0; i < length; ++i) {
    w.states.row(static_cast<Eigen::Index>(i)) = obs.states.row(static_cast<Eigen::Index>(newest_row - i));
  }
  w.t_newest = obs.times[newest_row];
  return w;
}

RolloutResult forecast_deterministic(const ClosureTerm& closure, const HistoryWindow& init, std::size_t horizon,
                                     const ClosureConfig& cfg) {
  if (cfg.variant == Variant::Instantaneous) {
    if (init.states.rows() < 1) throw ConfigError("forecast: empty initial window");
    return rollout_instantaneous_partial(init.states.row(0).transpose(), init.t_newest, closure, cfg, horizon);
  }
  const auto W = static_cast<Eigen::Index>(cfg.window_length());
  if (init.states.rows() < W) throw ConfigError("forecast: initial window is shorter than 2 n_h + 2 states");
  HistoryWindow w{init.states.topRows(W), init.t_newest};
  return rollout_partial(w, closure, cfg, horizon);
}

RolloutResult forecast_deterministic(const ClosureParams& params, const HistoryWindow& init, std::size_t horizon,
                                     const ClosureConfig& cfg) {
  return forecast_deterministic(NetworkClosure(params, cfg), init, horizon, cfg);
}

std::vector<std::size_t> retained_samples(std::size_t chain_length, double burn_in_fraction, std::size_t thinning) {
  if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0)) throw ConfigError("forecast.burn_in_fraction must lie in [0, 1)");
  if (thinning < 1) throw ConfigError("forecast.thinning must be >= 1");
  const auto first = static_cast<std::size_t>(std::floor(burn_in_fraction * static_cast<double>(chain_length)));
  std::vector<std::size_t> out;
  for (std::size_t i = first; i < chain_length; i += thinning) out.push_back(i);
  return out;
}

void ensemble_moments(const std::vector<Mat>& members, const std::vector<char>& ok, Mat& mean, Mat& variance) {
  if (members.size() != ok.size()) throw ConfigError("ensemble_moments: flag count does not match members");
  std::size_t n = 0;
  for (std::size_t m = 0; m < members.size(); ++m) {
    if (!ok[m]) continue;
    if (n == 0) {
      mean = Mat::Zero(members[m].rows(), members[m].cols());
    } else if (members[m].rows() != mean.rows() || members[m].cols() != mean.cols()) {
      throw ConfigError("ensemble_moments: members have different shapes");
    }
    mean += members[m];
    ++n;
  }
  if (n == 0) throw BlowupError("every ensemble member blew up", 0, 0.0);
  mean /= static_cast<double>(n);
  variance = Mat::Zero(mean.rows(), mean.cols());
  for (std::size_t m = 0; m < members.size(); ++m) {
    if (ok[m]) variance.array() += (members[m] - mean).array().square();
  }
  variance /= static_cast<double>(n);
}

ForecastEnsemble forecast_ensemble(const Chain& chain, const HistoryWindow& init, std::size_t horizon,
                                   const ClosureConfig& cfg, const EnsembleOptions& opts) {
  ForecastEnsemble e;
  e.member_samples = retained_samples(chain.samples.size(), opts.burn_in_fraction, opts.thinning);
  if (e.member_samples.empty()) throw ConfigError("forecast: no chain samples left after burn-in and thinning");
  const std::size_t M = e.member_samples.size();
  e.member_states.resize(M);
  e.member_closures.resize(M);
  e.member_ok.assign(M, 0);
  e.member_blowup_time.resize(M);
  std::vector<std::vector<double>> member_times(M);

  parallel_for(M, [&](std::size_t m) {
    const HmcSample& s = chain.samples[e.member_samples[m]];
    const ClosureParams p(chain.arch, s.theta);
    RolloutResult r = forecast_deterministic(p, init, horizon, cfg);
    e.member_ok[m] = r.blowup_step ? 0 : 1;
    e.member_blowup_time[m] = r.blowup_time;
    if (opts.noise_inflation && !r.blowup_step) {
      std::seed_seq seq{opts.noise_seed, static_cast<std::uint64_t>(e.member_samples[m])};
      std::mt19937_64 rng(seq);
      std::normal_distribution<double> noise(0.0, std::exp(-0.5 * s.prec.log_gamma));
      for (Eigen::Index i = 0; i < r.states.size(); ++i) r.states.data()[i] += noise(rng);
    }
    e.member_states[m] = std::move(r.states);
    e.member_closures[m] = std::move(r.closures);
    member_times[m] = std::move(r.times);
  });

  for (std::size_t m = 0; m < M; ++m) {
    if (!e.member_ok[m]) ++e.blown_up;
  }
  std::size_t best = 0;
  for (std::size_t m = 1; m < M; ++m) {
    if (chain.samples[e.member_samples[m]].log_posterior > chain.samples[e.member_samples[best]].log_posterior) best = m;
  }
  e.map_sample = e.member_samples[best];
  e.map_track = e.member_states[best];
  e.map_closures = e.member_closures[best];
  for (std::size_t m = 0; m < M; ++m) {
    if (e.member_ok[m]) {
      e.times = member_times[m];
      break;
    }
  }
  if (e.blown_up < M) {
    ensemble_moments(e.member_states, e.member_ok, e.mean, e.variance);
    ensemble_moments(e.member_closures, e.member_ok, e.closure_mean, e.closure_variance);
  }
  return e;
}

RmseSeries rmse(const Mat& truth, const Mat& pred) {
  if (truth.rows() != pred.rows() || truth.cols() != pred.cols()) {
    throw ConfigError("rmse: truth is " + std::to_string(truth.rows()) + "x" + std::to_string(truth.cols()) +
                      ", prediction is " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()));
  }
  RmseSeries out;
  out.series.reserve(static_cast<std::size_t>(truth.rows()));
  double num = 0.0;
  double den = 0.0;
  for (Eigen::Index i = 0; i < truth.rows(); ++i) {
    num += (truth.row(i) - pred.row(i)).squaredNorm();
    den += truth.row(i).squaredNorm();
    double v;
    if (den > 0.0) {
      v = std::sqrt(num) / std::sqrt(den);
    } else {
      v = num > 0.0 ? INFINITY : 0.0;
    }
    out.series.push_back(v);
  }
  out.final = out.series.empty() ? 0.0 : out.series.back();
  return out;
}

double frac_out_2sigma(const Mat& truth, const Mat& mean, const Mat& variance) {
  if (truth.rows() != mean.rows() || truth.cols() != mean.cols() || variance.rows() != mean.rows() ||
      variance.cols() != mean.cols()) {
    throw ConfigError("frac_out_2sigma: grids are not aligned");
  }
  if (truth.size() == 0) throw ConfigError("frac_out_2sigma: empty grid");
  std::size_t out = 0;
  for (Eigen::Index i = 0; i < truth.size(); ++i) {
    const double sd = std::sqrt(variance.data()[i]);
    const double mu = mean.data()[i];
    const double x = truth.data()[i];
    if (x < mu - 2.0 * sd || x > mu + 2.0 * sd) ++out;
  }
  return static_cast<double>(out) / static_cast<double>(truth.size());
}

SigmaR sigma_r(const Mat& truth, const Mat& variance) {
  if (truth.rows() != variance.rows() || truth.cols() != variance.cols()) throw ConfigError("sigma_r: grids are not aligned");
  SigmaR out;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < truth.size(); ++i) {
    const double x = truth.data()[i];
    if (std::abs(x) < 1e-8) {
      ++out.excluded;
      continue;
    }
    sum += std::sqrt(variance.data()[i]) / x;
    ++out.included;
  }
  if (out.included == 0) throw ConfigError("sigma_r: every term has |X| < 1e-8, the metric is undefined");
  out.value = sum / static_cast<double>(out.included);
  return out;
}

namespace {
void check_truth(const Mat& truth_states, const Mat& truth_closure, std::size_t rows) {
  if (static_cast<std::size_t>(truth_states.rows()) < rows || static_cast<std::size_t>(truth_closure.rows()) < rows ||
      truth_states.cols() != truth_closure.cols()) {
    throw ConfigError("metrics: truth does not cover the forecast grid");
  }
}
}  // namespace

MetricsReport deterministic_metrics(const RolloutResult& r, const Mat& truth_states, const Mat& truth_closure) {
  MetricsReport m;
  m.steps = r.size();
  check_truth(truth_states, truth_closure, m.steps);
  const auto n = static_cast<Eigen::Index>(m.steps);
  m.rmse_states = rmse(truth_states.topRows(n), r.states);
  m.rmse_closure = rmse(truth_closure.topRows(n), r.closures);
  m.divergence_time = r.blowup_time;
  m.members = 1;
  m.blown_up_members = r.blowup_step ? 1 : 0;
  return m;
}

MetricsReport ensemble_metrics(const ForecastEnsemble& e, const Mat& truth_states, const Mat& truth_closure) {
  if (e.finite_members() == 0) throw BlowupError("every ensemble member blew up", 0, 0.0);
  MetricsReport m;
  m.steps = static_cast<std::size_t>(e.mean.rows());
  check_truth(truth_states, truth_closure, m.steps);
  const auto n = e.mean.rows();
  const Mat ts = truth_states.topRows(n);
  const Mat tc = truth_closure.topRows(n);
  m.rmse_states = rmse(ts, e.mean);
  m.rmse_closure = rmse(tc, e.closure_mean);
  m.frac_out_2sigma_states = frac_out_2sigma(ts, e.mean, e.variance);
  m.frac_out_2sigma_closure = frac_out_2sigma(tc, e.closure_mean, e.closure_variance);
  m.sigma_r = sigma_r(ts, e.variance);
  m.members = e.size();
  m.blown_up_members = e.blown_up;
  return m;
}

StabilityReport coarse_step_stability_experiment(const TruthConfig& truth_cfg, const ClosureTerm& model,
                                                 const ClosureConfig& cfg, const HistoryWindow& init,
                                                 std::size_t horizon, const Mat& truth_states,
                                                 const std::vector<std::uint64_t>& extra_seeds,
                                                 bool check_reference) {
  truth_cfg.validate();
  if (cfg.variant != Variant::History) throw ConfigError("stability experiment needs the history variant");
  StabilityReport rep;
  rep.coarse_step = cfg.step();
  rep.horizon = horizon;
  const double t_end = static_cast<double>(horizon) * cfg.history.delta_t;

  auto coarse_divergence = [&](const TruthConfig& base) -> std::optional<double> {
    const FullState x0 = spun_up_initial_state(base);
    TruthConfig coarse = base;
    coarse.dt = rep.coarse_step;
    coarse.t_end = t_end;
    return simulate_truth_partial(coarse, x0).blowup_time;
  };
  rep.truth_divergence_time = coarse_divergence(truth_cfg);
  for (std::uint64_t s : extra_seeds) {
    TruthConfig c = truth_cfg;
    c.seed = s;
    rep.seeds.push_back(s);
    rep.seed_divergence_times.push_back(coarse_divergence(c));
  }
  if (check_reference) {
    rep.reference_finite = !simulate_truth_partial(truth_cfg, spun_up_initial_state(truth_cfg)).blowup_step;
  }

  const RolloutResult r = forecast_deterministic(model, init, horizon, cfg);
  rep.model_finite = !r.blowup_step && r.size() == horizon;
  rep.model_divergence_time = r.blowup_time;
  if (static_cast<std::size_t>(truth_states.rows()) < r.size()) throw ConfigError("stability: truth does not cover the horizon");
  rep.model_rmse = rmse(truth_states.topRows(static_cast<Eigen::Index>(r.size())), r.states).final;
  return rep;
}

}  // namespace l96
