// Command-line driver. Exit codes: 0 ok, 2 config error, 3 numerical blowup, 4 IO error.

#include "l96/commands.hpp"
#include "l96/types.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

struct Overrides {
  std::optional<double> noise, F, t_end, horizon, step_size;
  std::optional<std::size_t> threads, chain_length, phase1, phase2;
  std::optional<std::uint64_t> truth_seed;
  std::optional<std::string> variant, init, out;

  void attach(CLI::App* app) {
    app->add_option("--noise", noise, "observation.noise_fraction");
    app->add_option("--F", F, "truth.F");
    app->add_option("--t-end", t_end, "truth.t_end (MTU)");
    app->add_option("--horizon", horizon, "forecast.horizon_mtu");
    app->add_option("--step-size", step_size, "hmc.step_size");
    app->add_option("--threads", threads, "worker cap (0 = all cores)");
    app->add_option("--chain-length", chain_length, "hmc.chain_length");
    app->add_option("--phase1-iters", phase1, "train.phase1_iters");
    app->add_option("--phase2-iters", phase2, "train.phase2_iters");
    app->add_option("--truth-seed", truth_seed, "truth.seed");
    app->add_option("--variant", variant, "closure.variant (history | instantaneous)");
    app->add_option("--init", init, "forecast.init (first | last)");
    app->add_option("--out", out, "output directory (default: config output_dir)");
  }

  void apply(l96::ExperimentConfig& c) const {
    if (noise) c.observation.noise_fraction = *noise;
    if (F) c.truth.F = *F;
    if (t_end) c.truth.t_end = *t_end;
    if (horizon) c.forecast.horizon_mtu = *horizon;
    if (step_size) c.hmc.step_size = *step_size;
    if (threads) c.threads = *threads;
    if (chain_length) c.hmc.chain_length = *chain_length;
    if (phase1) c.train.base.phase1_iters = *phase1;
    if (phase2) c.train.base.phase2_iters = *phase2;
    if (truth_seed) c.truth.seed = *truth_seed;
    if (variant) c.closure.variant = l96::variant_from_string(*variant);
    if (init) c.forecast.init = *init;
    if (out) c.output_dir = *out;
  }
};

void print_result(const l96::CommandResult& r, const std::string& out_dir) {
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << r.summary.dump(2) << '\n';
  std::cout << "wrote " << r.outputs.size() << " files and manifest.json to " << out_dir << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-scale Lorenz '96 closure learning: simulate, train, sample and forecast"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(L96_VERSION));

  std::string config_path;
  Overrides ov;
  l96::CommandRequest req;
  std::string manifest, rerun_out;

  auto with_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "experiment config JSON")->required()->check(CLI::ExistingFile);
    ov.attach(sub);
  };

  auto* simulate = app.add_subcommand("simulate", "truth trajectory, coupling term and noisy observations");
  with_config(simulate);

  auto* train = app.add_subcommand("train", "two-phase Adam training of the closure network");
  with_config(train);
  train->add_option("--data", req.data_dir, "directory written by simulate")->required();

  auto* hmc = app.add_subcommand("hmc", "HMC posterior sampling started from a checkpoint");
  with_config(hmc);
  hmc->add_option("--data", req.data_dir, "directory written by simulate")->required();
  hmc->add_option("--checkpoint", req.checkpoint, "checkpoint.json from train")->required();

  auto* forecast = app.add_subcommand("forecast", "deterministic and ensemble forecasts with metrics");
  with_config(forecast);
  forecast->add_option("--data", req.data_dir, "directory written by simulate")->required();
  forecast->add_option("--checkpoint", req.checkpoint, "checkpoint.json from train")->required();
  forecast->add_option("--chain", req.chain_dir, "chain directory from hmc (enables the ensemble)");

  auto* sweep = app.add_subcommand("uq-sweep", "sigma_r over a forcing x noise grid");
  with_config(sweep);
  sweep->add_option("--F-values", req.F_values, "forcing values")->required();
  sweep->add_option("--noise-values", req.noise_values, "noise fractions")->required();

  auto* lyap = app.add_subcommand("lyapunov", "largest Lyapunov exponent of the truth model");
  with_config(lyap);

  auto* stab = app.add_subcommand("stability", "coarse-step truth versus trained history model");
  with_config(stab);
  stab->add_option("--data", req.data_dir, "directory written by simulate")->required();
  stab->add_option("--checkpoint", req.checkpoint, "history-variant checkpoint.json")->required();

  auto* pipe = app.add_subcommand("pipeline", "simulate, train, sample and forecast in one run");
  with_config(pipe);
  pipe->add_option("--variants", req.variants, "variants to run (default: both)");

  auto* rerun = app.add_subcommand("rerun", "re-execute a manifest and compare output hashes");
  rerun->add_option("--manifest", manifest, "manifest.json")->required()->check(CLI::ExistingFile);
  rerun->add_option("--out", rerun_out, "output directory (default: the manifest's directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (rerun->parsed()) {
      const l96::RerunReport rep = l96::rerun_manifest(manifest, rerun_out);
      for (const auto& f : rep.differing) std::cout << "DIFFERS " << f << '\n';
      std::cout << rep.matching.size() << " outputs identical, " << rep.differing.size() << " differ\n";
      return rep.ok() ? 0 : 1;
    }
    CLI::App* sub = app.get_subcommands().front();
    req.command = sub->get_name();
    req.config = l96::load_config(config_path);
    ov.apply(req.config);
    req.out_dir = req.config.output_dir;
    const l96::CommandResult r = l96::run_command(req);
    print_result(r, req.out_dir);
    return 0;
  } catch (const l96::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const l96::BlowupError& e) {
    std::cerr << "numerical blowup: " << e.what() << '\n';
    return 3;
  } catch (const l96::TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return 3;
  } catch (const l96::GradientError& e) {
    std::cerr << "gradient error: " << e.what() << '\n';
    return 3;
  } catch (const l96::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
