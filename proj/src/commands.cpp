#include "l96/commands.hpp"

#include "l96/parallel.hpp"
#include "l96/pipeline.hpp"

#include <filesystem>
#include <iostream>

#ifndef L96_VERSION
#define L96_VERSION "unknown"
#endif

namespace l96 {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string join(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

struct Outputs {
  std::string dir;
  std::vector<std::string> files;

  void csv(const std::string& rel, const CsvTable& t) {
    write_csv(join(dir, rel), t);
    files.push_back(rel);
  }
  void js(const std::string& rel, const json& j) {
    write_json(join(dir, rel), j);
    files.push_back(rel);
  }
  void add(const std::string& prefix, const std::vector<std::string>& rels) {
    for (const auto& r : rels) files.push_back(prefix.empty() ? r : prefix + "/" + r);
  }
};

CsvTable loss_table(const TrainReport& r) {
  CsvTable t;
  t.header = {"iteration", "phase", "loss"};
  t.data.resize(static_cast<Eigen::Index>(r.loss_curve.size()), 3);
  for (std::size_t i = 0; i < r.loss_curve.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    t.data(row, 0) = static_cast<double>(i);
    t.data(row, 1) = i < r.phase1_iters ? 1.0 : 2.0;
    t.data(row, 2) = r.loss_curve[i];
  }
  return t;
}

json train_summary(const TrainReport& r) {
  return json{{"iterations", r.loss_curve.size()},
              {"initial_loss", r.loss_curve.empty() ? 0.0 : r.loss_curve.front()},
              {"final_loss", r.loss_curve.empty() ? 0.0 : r.loss_curve.back()},
              {"residual_variance", r.residual_variance},
              {"one_step_rmse", r.one_step_rmse},
              {"zero_closure_one_step_rmse", r.zero_closure_one_step_rmse},
              {"blowup_batches", r.blowup_batches}};
}

void write_training(Outputs& out, const std::string& prefix, const ExperimentConfig& cfg, Variant v,
                    const TrainReport& r) {
  Checkpoint c;
  c.closure = cfg.closure_config(v);
  c.report = r;
  c.init_seed = cfg.closure.init_seed;
  c.config_hash = config_hash(cfg);
  write_checkpoint(join(out.dir, prefix + "checkpoint.json"), c);
  out.files.push_back(prefix + "checkpoint.json");
  out.csv(prefix + "loss_curve.csv", loss_table(r));
}

void write_chain_files(Outputs& out, const std::string& prefix, const ExperimentConfig& cfg, const Chain& chain) {
  write_chain(join(out.dir, prefix.empty() ? "." : prefix), chain, json{{"config_hash", config_hash(cfg)}});
  out.add(prefix.empty() ? "" : prefix.substr(0, prefix.size() - 1),
          {"chain_manifest.json", "chain_samples.f64", "chain_logpost.csv"});
}

json write_forecast(Outputs& out, const std::string& prefix, const InitOutcome& o) {
  out.csv(prefix + "forecast_deterministic.csv", rollout_table(o.deterministic));
  out.csv(prefix + "forecast_zero_closure.csv", rollout_table(o.zero));

  CsvTable series;
  series.header = {"t", "rmse_states", "rmse_closure"};
  const bool ens = o.ensemble_metrics.has_value();
  if (ens) {
    series.header.push_back("ensemble_rmse_states");
    series.header.push_back("ensemble_rmse_closure");
  }
  const auto n = static_cast<Eigen::Index>(o.truth.times.size());
  series.data = Mat::Constant(n, static_cast<Eigen::Index>(series.header.size()), std::nan(""));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto s = static_cast<std::size_t>(i);
    series.data(i, 0) = o.truth.times[s];
    if (s < o.deterministic_metrics.rmse_states.series.size()) {
      series.data(i, 1) = o.deterministic_metrics.rmse_states.series[s];
      series.data(i, 2) = o.deterministic_metrics.rmse_closure.series[s];
    }
    if (ens && s < o.ensemble_metrics->rmse_states.series.size()) {
      series.data(i, 3) = o.ensemble_metrics->rmse_states.series[s];
      series.data(i, 4) = o.ensemble_metrics->rmse_closure.series[s];
    }
  }
  out.csv(prefix + "metrics_series.csv", series);

  json m{{"init", o.init},
         {"t_start", o.t_start},
         {"deterministic", metrics_json(o.deterministic_metrics)},
         {"zero_closure", metrics_json(o.zero_metrics)},
         {"ensemble", nullptr}};
  if (o.ensemble) {
    const ForecastEnsemble& e = *o.ensemble;
    out.csv(prefix + "ensemble_members.csv", members_table(e));
    if (ens) {
      out.csv(prefix + "band_states.csv", band_table(e.times, e.mean, e.variance, o.truth.states, "X"));
      out.csv(prefix + "band_closure.csv", band_table(e.times, e.closure_mean, e.closure_variance, o.truth.closure, "P"));
      m["ensemble"] = metrics_json(*o.ensemble_metrics);
    } else {
      m["ensemble"] = {{"members", e.size()}, {"blown_up_members", e.blown_up}};
    }
    RolloutResult map;
    map.states = e.map_track;
    map.closures = e.map_closures;
    map.times.assign(o.truth.times.begin(), o.truth.times.begin() + e.map_track.rows());
    out.csv(prefix + "map_track.csv", rollout_table(map));
    m["map_sample"] = e.map_sample;
  }
  out.js(prefix + "metrics.json", m);
  return m;
}

void check_checkpoint(const Checkpoint& c, const ExperimentConfig& cfg) {
  const ClosureConfig expect = cfg.closure_config(c.closure.variant);
  if (c.closure.K != expect.K || c.closure.history.n_h != expect.history.n_h ||
      std::abs(c.closure.history.delta_t - expect.history.delta_t) > 1e-12 ||
      c.closure.input_mode != expect.input_mode || std::abs(c.closure.forcing - expect.forcing) > 0.0) {
    throw ConfigError("checkpoint closure settings do not match the configuration");
  }
}

std::vector<std::string> input_files(const CommandRequest& req) {
  std::vector<std::string> in;
  const std::string& c = req.command;
  if (c == "train" || c == "hmc" || c == "forecast" || c == "stability") {
    in.push_back(join(req.data_dir, "observations.json"));
    in.push_back(join(req.data_dir, "observations.csv"));
  }
  if (c == "forecast" || c == "stability") {
    in.push_back(join(req.data_dir, "truth.csv"));
    in.push_back(join(req.data_dir, "continuation.csv"));
  }
  if (c == "hmc" || c == "forecast" || c == "stability") {
    if (!req.checkpoint.empty() || c != "forecast") in.push_back(req.checkpoint);
  }
  if (c == "forecast" && !req.chain_dir.empty()) {
    for (const char* f : {"chain_manifest.json", "chain_samples.f64", "chain_logpost.csv"}) in.push_back(join(req.chain_dir, f));
  }
  return in;
}

json seeds_json(const ExperimentConfig& cfg) {
  return json{{"truth", cfg.truth.seed},
              {"observation", cfg.observation.seed},
              {"closure_init", cfg.closure.init_seed},
              {"train", cfg.train.base.seed},
              {"hmc", cfg.hmc.seed},
              {"forecast_noise", cfg.forecast.noise_seed}};
}

Variant parse_variant_name(const std::string& s) { return variant_from_string(s); }

CommandResult execute(const CommandRequest& req, Outputs& out) {
  const ExperimentConfig& cfg = req.config;
  CommandResult res;
  const std::string& c = req.command;

  if (c == "simulate") {
    const Dataset d = make_dataset(cfg);
    out.add("", write_dataset(out.dir, d));
    res.summary = {{"truth_rows", d.truth.times.size()},
                   {"observation_rows", d.obs.size()},
                   {"continuation_rows", d.continuation.times.size()},
                   {"one_step_targets", one_step_targets(d.obs, cfg.closure_config(Variant::History)).size()}};
  } else if (c == "train") {
    const ObservationSet obs = read_observations(req.data_dir);
    const Variant v = cfg.closure.variant;
    const TrainReport r = train_variant(cfg, obs, v);
    write_training(out, "", cfg, v, r);
    res.summary = train_summary(r);
    res.summary["variant"] = to_string(v);
    res.warnings = r.diagnostics;
  } else if (c == "hmc") {
    const ObservationSet obs = read_observations(req.data_dir);
    const Checkpoint ck = read_checkpoint(req.checkpoint);
    check_checkpoint(ck, cfg);
    const Chain chain = run_chain(ck.report, obs, ck.closure, cfg.hmc);
    write_chain_files(out, "", cfg, chain);
    res.summary = {{"variant", to_string(ck.closure.variant)},
                   {"samples", chain.samples.size()},
                   {"acceptance_rate", chain.acceptance_rate}};
    res.warnings = chain.warnings;
  } else if (c == "forecast") {
    const Dataset d = read_dataset(req.data_dir);
    std::optional<Chain> chain;
    if (!req.chain_dir.empty()) chain = read_chain(req.chain_dir);
    if (req.checkpoint.empty()) throw ConfigError("forecast needs a checkpoint (--checkpoint)");
    const Checkpoint ck = read_checkpoint(req.checkpoint);
    check_checkpoint(ck, cfg);
    if (chain && !(chain->arch == ck.report.final_params.arch)) {
      throw ConfigError("chain architecture does not match the checkpoint");
    }
    const InitOutcome o = forecast_variant(cfg, d, ck.closure.variant, ck.report.final_params,
                                           chain ? &*chain : nullptr, cfg.forecast.init);
    res.summary = write_forecast(out, "", o);
    res.summary["variant"] = to_string(ck.closure.variant);
  } else if (c == "stability") {
    const Dataset d = read_dataset(req.data_dir);
    const Checkpoint ck = read_checkpoint(req.checkpoint);
    check_checkpoint(ck, cfg);
    if (ck.closure.variant != Variant::History) throw ConfigError("stability needs a history-variant checkpoint");
    const std::size_t row = forecast_anchor_row(cfg, d.obs, "first");
    const HistoryWindow w = window_at(d.obs, row, ck.closure.window_length());
    const std::size_t horizon = cfg.horizon_ticks();
    const ForecastTruth truth = forecast_truth(d, cfg.delta_t(), w.t_newest, horizon);
    const StabilityReport s = coarse_step_stability_experiment(
        cfg.truth, NetworkClosure(ck.report.final_params, ck.closure), ck.closure, w, horizon, truth.states,
        {0, 1, 2, 3, 4});
    res.summary = stability_json(s);
    out.js("stability.json", res.summary);
  } else if (c == "lyapunov") {
    const LyapunovOptions opts;
    const double lam = estimate_max_lyapunov(cfg.truth, opts);
    res.summary = {{"lambda_max", lam},
                   {"transient", opts.transient},
                   {"averaging", opts.averaging},
                   {"renorm_interval", opts.renorm_interval},
                   {"perturbation", opts.perturbation}};
    out.js("lyapunov.json", res.summary);
  } else if (c == "uq-sweep") {
    const std::vector<UqCell> cells = uq_sweep(cfg, req.F_values, req.noise_values);
    CsvTable t;
    t.header = {"F", "noise_fraction", "sigma_r_first", "sigma_r_last", "sigma_r_mean", "ok"};
    t.data = Mat::Constant(static_cast<Eigen::Index>(cells.size()), 6, std::nan(""));
    json rows = json::array();
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const UqCell& u = cells[i];
      const auto r = static_cast<Eigen::Index>(i);
      t.data(r, 0) = u.F;
      t.data(r, 1) = u.noise;
      if (u.sigma_r_first) t.data(r, 2) = *u.sigma_r_first;
      if (u.sigma_r_last) t.data(r, 3) = *u.sigma_r_last;
      if (auto m = u.sigma_r_mean()) t.data(r, 4) = *m;
      t.data(r, 5) = u.error.empty() ? 1.0 : 0.0;
      json row{{"F", u.F}, {"noise_fraction", u.noise}};
      row["sigma_r_mean"] = u.sigma_r_mean() ? json(*u.sigma_r_mean()) : json(nullptr);
      if (!u.error.empty()) {
        row["error"] = u.error;
        res.warnings.push_back("cell F=" + std::to_string(u.F) + " noise=" + std::to_string(u.noise) + ": " + u.error);
      }
      rows.push_back(row);
    }
    out.csv("uq_table.csv", t);
    res.summary = {{"cells", rows}};
  } else if (c == "pipeline") {
    const Dataset d = make_dataset(cfg);
    out.add("data", write_dataset(join(out.dir, "data"), d));
    std::vector<std::string> names = req.variants;
    if (names.empty()) names = {"history", "instantaneous"};
    json summary = json::object();
    for (const std::string& name : names) {
      const Variant v = parse_variant_name(name);
      const VariantOutcome o = run_variant(cfg, d, v, true, {"first", "last"});
      const std::string p = name + "/";
      write_training(out, p, cfg, v, o.train);
      write_chain_files(out, p, cfg, *o.chain);
      json vs{{"train", train_summary(o.train)}, {"acceptance_rate", o.chain->acceptance_rate}};
      const ClosureConfig cc = cfg.closure_config(v);
      const ObservationSet clean = clean_observations(d, cfg.observation.stride);
      vs["clean_one_step_rmse"] = one_step_rmse(NetworkClosure(o.train.final_params, cc), clean, cc);
      vs["clean_zero_closure_one_step_rmse"] = one_step_rmse(ZeroClosure(), clean, cc);
      for (const InitOutcome& io : o.inits) vs["forecast_" + io.init] = write_forecast(out, p + "forecast_" + io.init + "/", io);
      for (const auto& w : o.chain->warnings) res.warnings.push_back(name + ": " + w);
      summary[name] = vs;
    }
    res.summary = summary;
    out.js("summary.json", summary);
  } else {
    throw ConfigError("unknown command '" + c + "'");
  }
  return res;
}

}  // namespace

json request_to_json(const CommandRequest& req) {
  return json{{"command", req.command},     {"config", config_to_json(req.config)}, {"out_dir", req.out_dir},
              {"data_dir", req.data_dir},   {"checkpoint", req.checkpoint},         {"chain_dir", req.chain_dir},
              {"F_values", req.F_values},   {"noise_values", req.noise_values},     {"variants", req.variants}};
}

CommandRequest request_from_json(const json& j) {
  CommandRequest r;
  try {
    r.command = j.at("command").get<std::string>();
    r.config = config_from_json(j.at("config"));
    r.out_dir = j.at("out_dir").get<std::string>();
    r.data_dir = j.at("data_dir").get<std::string>();
    r.checkpoint = j.at("checkpoint").get<std::string>();
    r.chain_dir = j.at("chain_dir").get<std::string>();
    r.F_values = j.at("F_values").get<std::vector<double>>();
    r.noise_values = j.at("noise_values").get<std::vector<double>>();
    r.variants = j.at("variants").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw IoError(std::string("manifest request is malformed: ") + e.what());
  }
  return r;
}

CommandResult run_command(const CommandRequest& req) {
  req.config.validate();
  if (req.out_dir.empty()) throw ConfigError("an output directory is required");
  set_thread_limit(req.config.threads);

  json inputs = json::array();
  for (const std::string& path : input_files(req)) {
    if (path.empty()) throw ConfigError(req.command + " needs a checkpoint (--checkpoint)");
    inputs.push_back({{"path", fs::absolute(path).string()}, {"sha256", sha256_file(path)}});
  }
  ensure_directory(req.out_dir);
  Outputs out{req.out_dir, {}};
  CommandResult res = execute(req, out);
  res.outputs = out.files;

  json outputs = json::array();
  for (const std::string& f : res.outputs) outputs.push_back({{"file", f}, {"sha256", sha256_file(join(req.out_dir, f))}});
  json manifest{{"tool", "l96closure"},
                {"version", L96_VERSION},
                {"command", req.command},
                {"request", request_to_json(req)},
                {"config_hash", config_hash(req.config)},
                {"seeds", seeds_json(req.config)},
                {"inputs", inputs},
                {"outputs", outputs},
                {"summary", res.summary},
                {"warnings", res.warnings}};
  write_json(join(req.out_dir, "manifest.json"), manifest);
  return res;
}

RerunReport rerun_manifest(const std::string& manifest_path, const std::string& out_dir) {
  const json m = read_json(manifest_path);
  CommandRequest req = request_from_json(m.at("request"));
  req.out_dir = out_dir.empty() ? fs::path(manifest_path).parent_path().string() : out_dir;
  if (req.out_dir.empty()) req.out_dir = ".";
  for (const auto& in : m.at("inputs")) {
    const std::string path = in.at("path").get<std::string>();
    if (sha256_file(path) != in.at("sha256").get<std::string>()) {
      throw IoError("input '" + path + "' changed since the manifest was written");
    }
  }
  std::vector<std::pair<std::string, std::string>> recorded;
  for (const auto& o : m.at("outputs")) recorded.emplace_back(o.at("file").get<std::string>(), o.at("sha256").get<std::string>());

  run_command(req);
  RerunReport rep;
  for (const auto& [file, hash] : recorded) {
    const std::string path = join(req.out_dir, file);
    const bool same = fs::exists(path) && sha256_file(path) == hash;
    (same ? rep.matching : rep.differing).push_back(file);
  }
  return rep;
}

}  // namespace l96
