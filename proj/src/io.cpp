#include "l96/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace l96 {

using nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "binary chain files assume a little-endian host");

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256: digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xf]);
  }
  return out;
}

std::string sha256_file(const std::string& path) { return sha256_hex(read_file(path)); }

void write_file(const std::string& path, const std::string& content) {
  const fs::path p(path);
  if (p.has_parent_path()) ensure_directory(p.parent_path().string());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp + "': " + std::strerror(errno));
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write to '" + tmp + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void ensure_directory(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw IoError("cannot create directory '" + path + "': " + ec.message());
}

void write_json(const std::string& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

json read_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw IoError("'" + path + "' is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// CSV

std::string format_csv(const CsvTable& t) {
  if (static_cast<std::size_t>(t.data.cols()) != t.header.size()) throw IoError("csv: header does not match columns");
  std::string out;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (c) out += ',';
    out += t.header[c];
  }
  out += '\n';
  char buf[40];
  for (Eigen::Index r = 0; r < t.data.rows(); ++r) {
    for (Eigen::Index c = 0; c < t.data.cols(); ++c) {
      if (c) out += ',';
      std::snprintf(buf, sizeof buf, "%.17g", t.data(r, c));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void write_csv(const std::string& path, const CsvTable& t) { write_file(path, format_csv(t)); }

CsvTable read_csv(const std::string& path) {
  std::istringstream in(read_file(path));
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path + "' is empty");
  {
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) t.header.push_back(cell);
  }
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const char* p = line.c_str();
    std::size_t cols = 0;
    for (;;) {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p) throw IoError("'" + path + "' line " + std::to_string(rows + 2) + ": not a number");
      values.push_back(v);
      ++cols;
      if (*end == ',') {
        p = end + 1;
      } else if (*end == '\0' || *end == '\r') {
        break;
      } else {
        throw IoError("'" + path + "' line " + std::to_string(rows + 2) + ": unexpected character");
      }
    }
    if (cols != t.header.size()) throw IoError("'" + path + "' line " + std::to_string(rows + 2) + ": wrong column count");
    ++rows;
  }
  t.data = Eigen::Map<Mat>(values.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(t.header.size()));
  return t;
}

CsvTable trajectory_table(const std::vector<double>& times, const Mat& slow, const Mat* coupling) {
  const auto n = static_cast<Eigen::Index>(times.size());
  const auto K = slow.cols();
  if (slow.rows() != n || (coupling && (coupling->rows() != n || coupling->cols() != K))) {
    throw IoError("trajectory table: inconsistent dimensions");
  }
  CsvTable t;
  t.header.push_back("t");
  for (Eigen::Index k = 1; k <= K; ++k) t.header.push_back("X" + std::to_string(k));
  if (coupling) {
    for (Eigen::Index k = 1; k <= K; ++k) t.header.push_back("C" + std::to_string(k));
  }
  t.data.resize(n, static_cast<Eigen::Index>(t.header.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    t.data(i, 0) = times[static_cast<std::size_t>(i)];
    t.data.row(i).segment(1, K) = slow.row(i);
    if (coupling) t.data.row(i).segment(1 + K, K) = coupling->row(i);
  }
  return t;
}

CsvTable rollout_table(const RolloutResult& r) {
  CsvTable t = trajectory_table(r.times, r.states, &r.closures);
  const std::size_t K = static_cast<std::size_t>(r.states.cols());
  for (std::size_t k = 0; k < K; ++k) t.header[1 + K + k] = "P" + std::to_string(k + 1);
  return t;
}

TruthSeries read_truth_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  const auto cols = t.data.cols();
  if (cols < 3 || (cols - 1) % 2 != 0 || t.header[0] != "t") throw IoError("'" + path + "' is not a truth trajectory file");
  const auto K = (cols - 1) / 2;
  TruthSeries s;
  for (Eigen::Index i = 0; i < t.data.rows(); ++i) s.times.push_back(t.data(i, 0));
  s.slow = t.data.middleCols(1, K);
  s.coupling = t.data.middleCols(1 + K, K);
  return s;
}

// ---------------------------------------------------------------------------
// Observations

void write_observations(const std::string& dir, const ObservationSet& obs) {
  obs.validate();
  ensure_directory(dir);
  json meta{{"points", obs.size()},
            {"K", obs.K()},
            {"delta_t", obs.delta_t},
            {"stride", obs.stride},
            {"noise_fraction", obs.noise_fraction},
            {"per_var_std", std::vector<double>(obs.per_var_std.data(), obs.per_var_std.data() + obs.per_var_std.size())},
            {"seed", obs.seed},
            {"payload", "observations.csv"}};
  write_json(dir + "/observations.json", meta);
  write_csv(dir + "/observations.csv", trajectory_table(obs.times, obs.states, nullptr));
}

ObservationSet read_observations(const std::string& dir) {
  const json meta = read_json(dir + "/observations.json");
  const CsvTable t = read_csv(dir + "/observations.csv");
  ObservationSet obs;
  try {
    const auto K = meta.at("K").get<Eigen::Index>();
    if (t.data.cols() != K + 1) throw IoError("observations.csv does not have K + 1 columns");
    for (Eigen::Index i = 0; i < t.data.rows(); ++i) obs.times.push_back(t.data(i, 0));
    obs.states = t.data.rightCols(K);
    obs.delta_t = meta.at("delta_t").get<double>();
    obs.stride = meta.at("stride").get<std::size_t>();
    obs.noise_fraction = meta.at("noise_fraction").get<double>();
    const auto sd = meta.at("per_var_std").get<std::vector<double>>();
    obs.per_var_std = Eigen::Map<const Vec>(sd.data(), static_cast<Eigen::Index>(sd.size()));
    obs.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw IoError("'" + dir + "/observations.json' is malformed: " + e.what());
  }
  try {
    obs.validate();
  } catch (const ConfigError& e) {
    throw IoError("'" + dir + "' holds an invalid observation set: " + e.what());
  }
  return obs;
}

// ---------------------------------------------------------------------------
// Checkpoints and chains

json mlp_architecture_json(const MlpArchitecture& a) {
  return json{{"input_dim", a.input_dim},
              {"hidden_layers", a.hidden_layers},
              {"hidden_width", a.hidden_width},
              {"output_dim", a.output_dim},
              {"activation", to_string(a.activation)},
              {"parameter_count", a.parameter_count()}};
}

MlpArchitecture mlp_architecture_from_json(const json& j) {
  MlpArchitecture a;
  a.input_dim = j.at("input_dim").get<std::size_t>();
  a.hidden_layers = j.at("hidden_layers").get<std::size_t>();
  a.hidden_width = j.at("hidden_width").get<std::size_t>();
  a.output_dim = j.at("output_dim").get<std::size_t>();
  a.activation = activation_from_string(j.at("activation").get<std::string>());
  a.validate();
  return a;
}

json closure_config_json(const ClosureConfig& c) {
  return json{{"variant", to_string(c.variant)},
              {"K", c.K},
              {"forcing", c.forcing},
              {"n_h", c.history.n_h},
              {"delta_t", c.history.delta_t},
              {"input_mode", to_string(c.input_mode)}};
}

ClosureConfig closure_config_from_json(const json& j) {
  ClosureConfig c;
  c.variant = variant_from_string(j.at("variant").get<std::string>());
  c.K = j.at("K").get<std::size_t>();
  c.forcing = j.at("forcing").get<double>();
  c.history.n_h = j.at("n_h").get<std::size_t>();
  c.history.delta_t = j.at("delta_t").get<double>();
  c.input_mode = input_mode_from_string(j.at("input_mode").get<std::string>());
  c.validate();
  return c;
}

void write_checkpoint(const std::string& path, const Checkpoint& c) {
  const TrainReport& r = c.report;
  json j{{"format", "l96closure-checkpoint"},
         {"version", 1},
         {"architecture", mlp_architecture_json(r.final_params.arch)},
         {"closure", closure_config_json(c.closure)},
         {"init_seed", c.init_seed},
         {"config_hash", c.config_hash},
         {"training",
          {{"iterations", r.loss_curve.size()},
           {"phase1_iters", r.phase1_iters},
           {"final_loss", r.loss_curve.empty() ? 0.0 : r.loss_curve.back()},
           {"residual_variance", r.residual_variance},
           {"one_step_rmse", r.one_step_rmse},
           {"zero_closure_one_step_rmse", r.zero_closure_one_step_rmse},
           {"blowup_batches", r.blowup_batches},
           {"diagnostics", r.diagnostics}}},
         {"parameters", r.final_params.flat}};
  write_json(path, j);
}

Checkpoint read_checkpoint(const std::string& path) {
  const json j = read_json(path);
  Checkpoint c;
  try {
    if (j.at("format").get<std::string>() != "l96closure-checkpoint") throw IoError("'" + path + "' is not a checkpoint");
    const MlpArchitecture arch = mlp_architecture_from_json(j.at("architecture"));
    c.closure = closure_config_from_json(j.at("closure"));
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    c.config_hash = j.at("config_hash").get<std::string>();
    const json& t = j.at("training");
    c.report.phase1_iters = t.at("phase1_iters").get<std::size_t>();
    c.report.residual_variance = t.at("residual_variance").get<double>();
    c.report.one_step_rmse = t.at("one_step_rmse").get<double>();
    c.report.zero_closure_one_step_rmse = t.at("zero_closure_one_step_rmse").get<double>();
    c.report.blowup_batches = t.at("blowup_batches").get<std::size_t>();
    c.report.diagnostics = t.at("diagnostics").get<std::vector<std::string>>();
    c.report.final_params = ClosureParams(arch, j.at("parameters").get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw IoError("'" + path + "' is malformed: " + e.what());
  } catch (const ConfigError& e) {
    throw IoError("'" + path + "' is inconsistent: " + e.what());
  }
  return c;
}

void write_chain(const std::string& dir, const Chain& chain, const json& extra) {
  ensure_directory(dir);
  const std::size_t N = chain.arch.parameter_count();
  const std::size_t width = N + 2;
  std::string bin;
  bin.resize(chain.samples.size() * width * sizeof(double));
  char* p = bin.data();
  CsvTable lp;
  lp.header = {"step", "log_posterior", "accepted", "log_gamma", "log_lambda"};
  lp.data.resize(static_cast<Eigen::Index>(chain.samples.size()), 5);
  for (std::size_t s = 0; s < chain.samples.size(); ++s) {
    const HmcSample& smp = chain.samples[s];
    if (smp.theta.size() != N) throw IoError("chain sample " + std::to_string(s) + " has the wrong length");
    std::memcpy(p, smp.theta.data(), N * sizeof(double));
    p += N * sizeof(double);
    std::memcpy(p, &smp.prec.log_gamma, sizeof(double));
    p += sizeof(double);
    std::memcpy(p, &smp.prec.log_lambda, sizeof(double));
    p += sizeof(double);
    const auto r = static_cast<Eigen::Index>(s);
    lp.data(r, 0) = static_cast<double>(s);
    lp.data(r, 1) = smp.log_posterior;
    lp.data(r, 2) = smp.accepted ? 1.0 : 0.0;
    lp.data(r, 3) = smp.prec.log_gamma;
    lp.data(r, 4) = smp.prec.log_lambda;
  }
  write_file(dir + "/chain_samples.f64", bin);
  write_csv(dir + "/chain_logpost.csv", lp);
  const HmcConfig& h = chain.config;
  json m{{"format", "l96closure-chain"},
         {"version", 1},
         {"samples", chain.samples.size()},
         {"columns", width},
         {"layout", "row-major float64 little-endian: theta[0..N-1], log_gamma, log_lambda"},
         {"architecture", mlp_architecture_json(chain.arch)},
         {"acceptance_rate", chain.acceptance_rate},
         {"warnings", chain.warnings},
         {"hmc",
          {{"step_size", h.step_size}, {"leapfrog_steps", h.leapfrog_steps}, {"chain_length", h.chain_length},
           {"alpha1", h.alpha1}, {"beta1", h.beta1}, {"alpha2", h.alpha2}, {"beta2", h.beta2}, {"seed", h.seed}}}};
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  write_json(dir + "/chain_manifest.json", m);
}

Chain read_chain(const std::string& dir) {
  const json m = read_json(dir + "/chain_manifest.json");
  Chain chain;
  std::size_t n = 0;
  try {
    if (m.at("format").get<std::string>() != "l96closure-chain") throw IoError("'" + dir + "' does not hold a chain");
    chain.arch = mlp_architecture_from_json(m.at("architecture"));
    chain.acceptance_rate = m.at("acceptance_rate").get<double>();
    chain.warnings = m.at("warnings").get<std::vector<std::string>>();
    const json& h = m.at("hmc");
    chain.config.step_size = h.at("step_size").get<double>();
    chain.config.leapfrog_steps = h.at("leapfrog_steps").get<std::size_t>();
    chain.config.chain_length = h.at("chain_length").get<std::size_t>();
    chain.config.alpha1 = h.at("alpha1").get<double>();
    chain.config.beta1 = h.at("beta1").get<double>();
    chain.config.alpha2 = h.at("alpha2").get<double>();
    chain.config.beta2 = h.at("beta2").get<double>();
    chain.config.seed = h.at("seed").get<std::uint64_t>();
    n = m.at("samples").get<std::size_t>();
  } catch (const json::exception& e) {
    throw IoError("'" + dir + "/chain_manifest.json' is malformed: " + e.what());
  }
  const std::size_t N = chain.arch.parameter_count();
  const std::string bin = read_file(dir + "/chain_samples.f64");
  if (bin.size() != n * (N + 2) * sizeof(double)) throw IoError("'" + dir + "/chain_samples.f64' has the wrong size");
  const CsvTable lp = read_csv(dir + "/chain_logpost.csv");
  if (static_cast<std::size_t>(lp.data.rows()) != n || lp.data.cols() != 5) throw IoError("'" + dir + "/chain_logpost.csv' does not match the manifest");
  const char* p = bin.data();
  for (std::size_t s = 0; s < n; ++s) {
    HmcSample smp;
    smp.theta.resize(N);
    std::memcpy(smp.theta.data(), p, N * sizeof(double));
    p += N * sizeof(double);
    std::memcpy(&smp.prec.log_gamma, p, sizeof(double));
    p += sizeof(double);
    std::memcpy(&smp.prec.log_lambda, p, sizeof(double));
    p += sizeof(double);
    smp.log_posterior = lp.data(static_cast<Eigen::Index>(s), 1);
    smp.accepted = lp.data(static_cast<Eigen::Index>(s), 2) != 0.0;
    chain.samples.push_back(std::move(smp));
  }
  return chain;
}

}  // namespace l96
