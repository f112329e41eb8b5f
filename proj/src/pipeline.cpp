#include "l96/pipeline.hpp"

#include <cmath>

namespace l96 {

using nlohmann::json;

Dataset make_dataset(const ExperimentConfig& cfg) {
  cfg.validate();
  const FullState x0 = spun_up_initial_state(cfg.truth);
  const TruthTrajectory traj = simulate_truth(cfg.truth, x0);
  Dataset d;
  d.obs = make_observations(traj, cfg.observation.stride, cfg.observation.noise_fraction, cfg.observation.seed);
  d.truth = TruthSeries{traj.times, traj.slow, traj.coupling};

  TruthConfig cont_cfg = cfg.truth;
  cont_cfg.t_end = cfg.forecast.horizon_mtu;
  const TruthTrajectory cont = simulate_truth(cont_cfg, traj.final_state);
  const auto n = static_cast<Eigen::Index>(cont.size()) - 1;
  const double t0 = traj.times.back();
  for (std::size_t i = 1; i < cont.size(); ++i) d.continuation.times.push_back(t0 + cont.times[i]);
  d.continuation.slow = cont.slow.bottomRows(n);
  d.continuation.coupling = cont.coupling.bottomRows(n);
  return d;
}

std::vector<std::string> write_dataset(const std::string& dir, const Dataset& d) {
  ensure_directory(dir);
  write_csv(dir + "/truth.csv", trajectory_table(d.truth.times, d.truth.slow, &d.truth.coupling));
  write_csv(dir + "/continuation.csv",
            trajectory_table(d.continuation.times, d.continuation.slow, &d.continuation.coupling));
  write_observations(dir, d.obs);
  return {"truth.csv", "continuation.csv", "observations.json", "observations.csv"};
}

Dataset read_dataset(const std::string& dir) {
  Dataset d;
  d.truth = read_truth_csv(dir + "/truth.csv");
  d.continuation = read_truth_csv(dir + "/continuation.csv");
  d.obs = read_observations(dir);
  return d;
}

std::size_t forecast_anchor_row(const ExperimentConfig& cfg, const ObservationSet& obs, const std::string& init) {
  const std::size_t W = cfg.closure_config(Variant::History).window_length();
  if (obs.size() < W) throw ConfigError("observation grid is shorter than one history window");
  if (init == "first") return W - 1;
  if (init == "last") return obs.size() - 1;
  throw ConfigError("forecast.init must be 'first' or 'last', got '" + init + "'");
}

ForecastTruth forecast_truth(const Dataset& d, double delta_t, double t_newest, std::size_t horizon) {
  if (d.truth.times.size() < 2) throw ConfigError("forecast truth: truth series is too short");
  const double dt = d.truth.times[1] - d.truth.times[0];
  const auto n_main = static_cast<std::size_t>(d.truth.slow.rows());
  const auto n_cont = static_cast<std::size_t>(d.continuation.slow.rows());
  const auto K = d.truth.slow.cols();
  ForecastTruth out;
  out.states.resize(static_cast<Eigen::Index>(horizon), K);
  out.closure.resize(static_cast<Eigen::Index>(horizon), K);
  for (std::size_t i = 1; i <= horizon; ++i) {
    const double t = t_newest + static_cast<double>(i) * delta_t;
    const double pos = (t - d.truth.times[0]) / dt;
    const auto m = static_cast<std::size_t>(std::llround(pos));
    if (std::abs(pos - static_cast<double>(m)) > 1e-6) throw ConfigError("forecast truth: time is off the truth grid");
    const auto r = static_cast<Eigen::Index>(i - 1);
    if (m < n_main) {
      out.states.row(r) = d.truth.slow.row(static_cast<Eigen::Index>(m));
      out.closure.row(r) = d.truth.coupling.row(static_cast<Eigen::Index>(m));
    } else if (m - n_main < n_cont) {
      out.states.row(r) = d.continuation.slow.row(static_cast<Eigen::Index>(m - n_main));
      out.closure.row(r) = d.continuation.coupling.row(static_cast<Eigen::Index>(m - n_main));
    } else {
      throw ConfigError("forecast truth: horizon extends past the stored continuation");
    }
    out.times.push_back(t);
  }
  return out;
}

ObservationSet clean_observations(const Dataset& d, std::size_t stride) {
  if (stride < 1 || d.truth.times.size() < 2) throw ConfigError("clean observations: bad stride or empty truth");
  const std::size_t n = (d.truth.times.size() - 1) / stride + 1;
  ObservationSet obs = d.obs;
  obs.noise_fraction = 0.0;
  obs.times.clear();
  obs.states.resize(static_cast<Eigen::Index>(n), d.truth.slow.cols());
  for (std::size_t i = 0; i < n; ++i) {
    obs.times.push_back(d.truth.times[i * stride]);
    obs.states.row(static_cast<Eigen::Index>(i)) = d.truth.slow.row(static_cast<Eigen::Index>(i * stride));
  }
  return obs;
}

double one_step_rmse(const ClosureTerm& closure, const ObservationSet& obs, const ClosureConfig& cfg) {
  const OneStepFit f = one_step_fit(closure, obs, cfg);
  if (f.blowup || f.count == 0) return INFINITY;
  return std::sqrt(f.ssr / static_cast<double>(f.count));
}

TrainReport train_variant(const ExperimentConfig& cfg, const ObservationSet& obs, Variant v) {
  const ClosureConfig cc = cfg.closure_config(v);
  const ClosureParams init = ClosureParams::glorot(cfg.architecture(v), cfg.closure.init_seed);
  return adam_train(obs, init, cc, cfg.train_config(v));
}

Chain sample_variant(const ExperimentConfig& cfg, const ObservationSet& obs, Variant v, const TrainReport& trained) {
  return run_chain(trained, obs, cfg.closure_config(v), cfg.hmc);
}

InitOutcome forecast_variant(const ExperimentConfig& cfg, const Dataset& d, Variant v, const ClosureParams& params,
                             const Chain* chain, const std::string& init) {
  const ClosureConfig cc = cfg.closure_config(v);
  const std::size_t horizon = cfg.horizon_ticks();
  const std::size_t row = forecast_anchor_row(cfg, d.obs, init);
  const HistoryWindow window = window_at(d.obs, row, cfg.closure_config(Variant::History).window_length());

  InitOutcome out;
  out.init = init;
  out.t_start = window.t_newest;
  out.truth = forecast_truth(d, cfg.delta_t(), window.t_newest, horizon);
  out.deterministic = forecast_deterministic(params, window, horizon, cc);
  out.deterministic_metrics = deterministic_metrics(out.deterministic, out.truth.states, out.truth.closure);
  out.zero = forecast_deterministic(ZeroClosure(), window, horizon, cc);
  out.zero_metrics = deterministic_metrics(out.zero, out.truth.states, out.truth.closure);
  if (chain) {
    EnsembleOptions opts;
    opts.burn_in_fraction = cfg.forecast.burn_in_fraction;
    opts.thinning = cfg.forecast.thinning;
    opts.noise_inflation = cfg.forecast.noise_inflation;
    opts.noise_seed = cfg.forecast.noise_seed;
    out.ensemble = forecast_ensemble(*chain, window, horizon, cc, opts);
    if (out.ensemble->finite_members() > 0) {
      out.ensemble_metrics = ensemble_metrics(*out.ensemble, out.truth.states, out.truth.closure);
    }
  }
  return out;
}

VariantOutcome run_variant(const ExperimentConfig& cfg, const Dataset& d, Variant v, bool with_hmc,
                           const std::vector<std::string>& inits) {
  VariantOutcome out;
  out.variant = v;
  out.train = train_variant(cfg, d.obs, v);
  if (with_hmc) out.chain = sample_variant(cfg, d.obs, v, out.train);
  for (const std::string& init : inits) {
    out.inits.push_back(forecast_variant(cfg, d, v, out.train.final_params, out.chain ? &*out.chain : nullptr, init));
  }
  return out;
}

std::optional<double> UqCell::sigma_r_mean() const {
  if (!sigma_r_first || !sigma_r_last) return std::nullopt;
  return 0.5 * (*sigma_r_first + *sigma_r_last);
}

std::vector<UqCell> uq_sweep(const ExperimentConfig& base, const std::vector<double>& F_values,
                             const std::vector<double>& noise_values) {
  if (F_values.empty() || noise_values.empty()) throw ConfigError("uq sweep: empty F or noise grid");
  std::vector<UqCell> cells;
  for (double F : F_values) {
    for (double noise : noise_values) {
      UqCell cell;
      cell.F = F;
      cell.noise = noise;
      ExperimentConfig cfg = base;
      cfg.truth.F = F;
      cfg.observation.noise_fraction = noise;
      try {
        cfg.validate();
        const Dataset d = make_dataset(cfg);
        const VariantOutcome o = run_variant(cfg, d, Variant::History, true, {"first", "last"});
        for (const InitOutcome& io : o.inits) {
          if (!io.ensemble_metrics || !io.ensemble_metrics->sigma_r) continue;
          (io.init == "first" ? cell.sigma_r_first : cell.sigma_r_last) = io.ensemble_metrics->sigma_r->value;
        }
        if (!cell.sigma_r_mean()) cell.error = "every ensemble member blew up";
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      cells.push_back(cell);
    }
  }
  return cells;
}

namespace {
json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
}  // namespace

json metrics_json(const MetricsReport& m) {
  json j{{"steps", m.steps},
         {"rmse_states", m.rmse_states.series.empty() ? json(nullptr) : json(m.rmse_states.final)},
         {"rmse_closure", m.rmse_closure.series.empty() ? json(nullptr) : json(m.rmse_closure.final)},
         {"divergence_time", optional_number(m.divergence_time)},
         {"members", m.members},
         {"blown_up_members", m.blown_up_members},
         {"frac_out_2sigma_states", optional_number(m.frac_out_2sigma_states)},
         {"frac_out_2sigma_closure", optional_number(m.frac_out_2sigma_closure)}};
  if (m.sigma_r) {
    j["sigma_r"] = {{"value", m.sigma_r->value}, {"included", m.sigma_r->included}, {"excluded", m.sigma_r->excluded}};
  } else {
    j["sigma_r"] = nullptr;
  }
  return j;
}

json stability_json(const StabilityReport& s) {
  json seeds = json::array();
  for (std::size_t i = 0; i < s.seeds.size(); ++i) {
    seeds.push_back({{"seed", s.seeds[i]}, {"divergence_time", optional_number(s.seed_divergence_times[i])}});
  }
  return json{{"coarse_step", s.coarse_step},
              {"horizon_ticks", s.horizon},
              {"truth_divergence_time", optional_number(s.truth_divergence_time)},
              {"truth_seed_sweep", seeds},
              {"reference_finite", s.reference_finite},
              {"model_finite", s.model_finite},
              {"model_divergence_time", optional_number(s.model_divergence_time)},
              {"model_rmse", s.model_rmse}};
}

CsvTable band_table(const std::vector<double>& times, const Mat& mean, const Mat& variance, const Mat& truth,
                    const std::string& prefix) {
  const auto n = static_cast<Eigen::Index>(times.size());
  const auto K = mean.cols();
  if (mean.rows() != n || variance.rows() != n || truth.rows() < n) throw ConfigError("band table: inconsistent grids");
  CsvTable t;
  t.header.push_back("t");
  for (Eigen::Index k = 1; k <= K; ++k) {
    const std::string s = prefix + std::to_string(k);
    for (const char* suffix : {"_mean", "_lo", "_hi", "_truth"}) t.header.push_back(s + suffix);
  }
  t.data.resize(n, 1 + 4 * K);
  for (Eigen::Index i = 0; i < n; ++i) {
    t.data(i, 0) = times[static_cast<std::size_t>(i)];
    for (Eigen::Index k = 0; k < K; ++k) {
      const double sd = std::sqrt(variance(i, k));
      t.data(i, 1 + 4 * k) = mean(i, k);
      t.data(i, 2 + 4 * k) = mean(i, k) - 2.0 * sd;
      t.data(i, 3 + 4 * k) = mean(i, k) + 2.0 * sd;
      t.data(i, 4 + 4 * k) = truth(i, k);
    }
  }
  return t;
}

CsvTable members_table(const ForecastEnsemble& e) {
  Eigen::Index rows = 0;
  Eigen::Index K = 0;
  for (const Mat& m : e.member_states) {
    rows += m.rows();
    K = std::max(K, m.cols());
  }
  CsvTable t;
  t.header = {"member", "sample", "t"};
  for (Eigen::Index k = 1; k <= K; ++k) t.header.push_back("X" + std::to_string(k));
  t.data.resize(rows, 3 + K);
  Eigen::Index r = 0;
  for (std::size_t m = 0; m < e.size(); ++m) {
    for (Eigen::Index i = 0; i < e.member_states[m].rows(); ++i, ++r) {
      t.data(r, 0) = static_cast<double>(m);
      t.data(r, 1) = static_cast<double>(e.member_samples[m]);
      t.data(r, 2) = e.times.empty() ? static_cast<double>(i) : e.times[static_cast<std::size_t>(i)];
      t.data.row(r).tail(K) = e.member_states[m].row(i);
    }
  }
  return t;
}

}  // namespace l96
