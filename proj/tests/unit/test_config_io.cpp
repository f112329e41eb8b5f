// Configuration parsing and the on-disk formats.
#include <gtest/gtest.h>

#include <l96/config.hpp>
#include <l96/io.hpp>

#include <filesystem>
#include <random>

using namespace l96;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string expect_config_error(const json& j) {
  try {
    config_from_json(j).validate();
  } catch (const ConfigError& e) {
    return e.what();
  }
  ADD_FAILURE() << "no ConfigError for " << j.dump();
  return {};
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("l96_io_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

ClosureParams seeded_params(std::uint64_t seed) {
  ClosureConfig c;
  ClosureParams p = ClosureParams::glorot(closure_architecture(c, 2, 5, Activation::Tanh), seed);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  for (double& v : p.flat) v += 1e-3 * n(rng);
  return p;
}

}  // namespace

// ============================================================================
// Configuration
// ============================================================================

TEST(Config, DefaultsMatchTheTwoScaleSetup) {
  const ExperimentConfig c = config_from_json(json::object());
  EXPECT_EQ(c.truth.K, 8u);
  EXPECT_EQ(c.truth.J, 32u);
  EXPECT_EQ(c.truth.F, 15.0);
  EXPECT_EQ(c.truth.dt, 0.005);
  EXPECT_EQ(c.observation.stride, 2u);
  EXPECT_DOUBLE_EQ(c.delta_t(), 0.01);
  EXPECT_EQ(c.closure.n_h, 2u);
  EXPECT_EQ(c.horizon_ticks(), 1000u);
  EXPECT_EQ(c.architecture(Variant::History).input_dim, 3u);
  EXPECT_EQ(c.architecture(Variant::Instantaneous).input_dim, 1u);
  EXPECT_EQ(c.train_config(Variant::History).n_f, 5u);
  EXPECT_EQ(c.train_config(Variant::Instantaneous).n_f, 4u);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c;
  c.truth.F = 12.5;
  c.closure.variant = Variant::Instantaneous;
  c.closure.activation = Activation::Relu;
  c.hmc.step_size = 3e-5;
  c.forecast.init = "last";
  const ExperimentConfig d = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(d), config_to_json(c));
  EXPECT_EQ(config_hash(d), config_hash(c));
}

TEST(Config, ErrorsNameTheFieldPath) {
  EXPECT_NE(expect_config_error({{"truth", {{"K", "eight"}}}}).find("truth.K"), std::string::npos);
  EXPECT_NE(expect_config_error({{"hmc", {{"step_size", -1.0}}}}).find("hmc.step_size"), std::string::npos);
  EXPECT_NE(expect_config_error({{"closure", {{"variant", "both"}}}}).find("closure.variant"), std::string::npos);
  EXPECT_NE(expect_config_error({{"train", {{"batch_size", 0}}}}).find("batch_size"), std::string::npos);
}

TEST(Config, UnknownKeyRejected) {
  EXPECT_NE(expect_config_error({{"truth", {{"forcing", 10}}}}).find("truth.forcing"), std::string::npos);
  EXPECT_NE(expect_config_error({{"colour", "blue"}}).find("colour"), std::string::npos);
}

TEST(Config, ObservationIntervalMustMatchStride) {
  EXPECT_NE(expect_config_error({{"observation", {{"delta_t", 0.02}}}}).find("delta_t"), std::string::npos);
  EXPECT_NO_THROW(config_from_json({{"observation", {{"delta_t", 0.01}}}}));
}

TEST(Config, HorizonMustBeWholeTicks) {
  EXPECT_NE(expect_config_error({{"forecast", {{"horizon_mtu", 0.015}}}}).find("horizon_mtu"), std::string::npos);
}

TEST(Config, HashIgnoresOutputLocationAndThreads) {
  ExperimentConfig a, b;
  b.output_dir = "elsewhere";
  b.threads = 3;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.truth.seed = 9;
  EXPECT_NE(config_hash(a), config_hash(b));
}

// ============================================================================
// Hashing and CSV
// ============================================================================

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Csv, RoundTripIsBitExact) {
  TempDir d;
  CsvTable t;
  t.header = {"t", "a", "b"};
  t.data.resize(3, 3);
  t.data << 0.1, -1.0 / 3.0, 1e-300, 2.0, 6.02214076e23, -0.0, 1.0 / 7.0, 5e-324, 12345.678901234567;
  write_csv(d / "t.csv", t);
  const CsvTable u = read_csv(d / "t.csv");
  EXPECT_EQ(u.header, t.header);
  EXPECT_EQ(u.data, t.data);
}

TEST(Csv, MalformedInputRaisesIoError) {
  TempDir d;
  write_file(d / "bad.csv", "t,a\n1,2\n3\n");
  EXPECT_THROW(read_csv(d / "bad.csv"), IoError);
  write_file(d / "word.csv", "t,a\n1,x\n");
  EXPECT_THROW(read_csv(d / "word.csv"), IoError);
  EXPECT_THROW(read_csv(d / "missing.csv"), IoError);
}

// ============================================================================
// Observations, checkpoints and chains
// ============================================================================

TEST(Observations, RoundTrip) {
  TempDir d;
  TruthConfig tc;
  tc.seed = 4;
  tc.t_end = 0.5;
  const ObservationSet o = make_observations(simulate_truth(tc, spun_up_initial_state(tc)), 2, 0.03, 5);
  write_observations(d.path.string(), o);
  const ObservationSet r = read_observations(d.path.string());
  EXPECT_EQ(r.times, o.times);
  EXPECT_EQ(r.states, o.states);
  EXPECT_EQ(r.per_var_std, o.per_var_std);
  EXPECT_EQ(r.delta_t, o.delta_t);
  EXPECT_EQ(r.stride, o.stride);
  EXPECT_EQ(r.seed, o.seed);
}

TEST(Checkpoint, RoundTrip) {
  TempDir d;
  Checkpoint c;
  c.closure.variant = Variant::History;
  c.closure.history.n_h = 2;
  c.report.final_params = seeded_params(3);
  c.report.loss_curve = {1.0, 0.5, 0.25};
  c.report.phase1_iters = 2;
  c.report.residual_variance = 1.234e-3;
  c.init_seed = 3;
  c.config_hash = "abc";
  write_checkpoint(d / "ck.json", c);
  const Checkpoint r = read_checkpoint(d / "ck.json");
  EXPECT_EQ(r.report.final_params.flat, c.report.final_params.flat);
  EXPECT_EQ(r.report.final_params.arch.parameter_count(), c.report.final_params.arch.parameter_count());
  EXPECT_EQ(r.report.residual_variance, c.report.residual_variance);
  EXPECT_EQ(r.closure.history.n_h, 2u);
  EXPECT_EQ(r.config_hash, "abc");
}

TEST(Checkpoint, WrongFormatRejected) {
  TempDir d;
  write_json(d / "x.json", json{{"format", "other"}});
  EXPECT_THROW(read_checkpoint(d / "x.json"), IoError);
}

TEST(Chain, RoundTripIsBitExact) {
  TempDir d;
  Chain ch;
  ch.arch = seeded_params(1).arch;
  ch.acceptance_rate = 0.5;
  for (std::uint64_t s = 0; s < 4; ++s) {
    HmcSample smp;
    smp.theta = seeded_params(10 + s).flat;
    smp.prec = {6.0 + 0.1 * static_cast<double>(s), -0.01 * static_cast<double>(s)};
    smp.log_posterior = -100.0 / static_cast<double>(s + 1);
    smp.accepted = s % 2 == 0;
    ch.samples.push_back(smp);
  }
  write_chain(d.path.string(), ch, json::object());
  const Chain r = read_chain(d.path.string());
  ASSERT_EQ(r.samples.size(), 4u);
  for (std::size_t s = 0; s < 4; ++s) {
    EXPECT_EQ(r.samples[s].theta, ch.samples[s].theta);
    EXPECT_EQ(r.samples[s].prec.log_gamma, ch.samples[s].prec.log_gamma);
    EXPECT_EQ(r.samples[s].prec.log_lambda, ch.samples[s].prec.log_lambda);
    EXPECT_EQ(r.samples[s].log_posterior, ch.samples[s].log_posterior);
    EXPECT_EQ(r.samples[s].accepted, ch.samples[s].accepted);
  }
  EXPECT_EQ(r.arch.parameter_count(), ch.arch.parameter_count());
}

TEST(Chain, TruncatedSamplesRejected) {
  TempDir d;
  Chain ch;
  ch.arch = seeded_params(1).arch;
  HmcSample smp;
  smp.theta = seeded_params(2).flat;
  ch.samples = {smp, smp};
  write_chain(d.path.string(), ch, json::object());
  const std::string bin = read_file(d / "chain_samples.f64");
  write_file(d / "chain_samples.f64", bin.substr(0, bin.size() - 8));
  EXPECT_THROW(read_chain(d.path.string()), IoError);
}
