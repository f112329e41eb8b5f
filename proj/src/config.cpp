#include "l96/config.hpp"

#include "l96/io.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace l96 {

using nlohmann::json;

namespace {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "must be an object");
  }

  void number(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(field(key) + " must be a number");
      out = v->get<double>();
      if (!std::isfinite(out)) throw ConfigError(field(key) + " must be finite");
    }
  }

  template <class T>
  void count(const char* key, T& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
        throw ConfigError(field(key) + " must be a non-negative integer");
      }
      out = static_cast<T>(v->get<std::uint64_t>());
    }
  }

  void text(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(field(key) + " must be a string");
      out = v->get<std::string>();
    }
  }

  void flag(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(field(key) + " must be true or false");
      out = v->get<bool>();
    }
  }

  template <class E, class Parse>
  void choice(const char* key, E& out, Parse parse) {
    std::string s;
    if (find(key)) {
      text(key, s);
      try {
        out = parse(s);
      } catch (const ConfigError& e) {
        throw ConfigError(field(key) + ": " + e.what());
      }
    }
  }

  const json* sub(const char* key) { return find(key); }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown configuration field '" + field(it.key().c_str()) + "'");
    }
  }

 private:
  const json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string where() const { return path_.empty() ? "configuration " : path_ + " "; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void check(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

void ExperimentConfig::validate() const {
  truth.validate();
  check(observation.stride >= 1, "observation.stride must be >= 1");
  check(observation.noise_fraction >= 0.0, "observation.noise_fraction must be >= 0");
  check(truth.step_count() / observation.stride >= 2 * closure.n_h + 4,
        "truth.t_end is too short for a single training window at observation.stride");
  check(closure.n_h >= 1, "closure.n_h must be >= 1");
  check(closure.hidden_layers == 0 || closure.hidden_width >= 1, "closure.hidden_width must be >= 1");
  TrainConfig t = train.base;
  t.n_f = 1;
  t.validate();
  check(train.n_f_history >= 1, "train.n_f_history must be >= 1");
  check(train.n_f_instantaneous >= 1, "train.n_f_instantaneous must be >= 1");
  hmc.validate();
  check(forecast.horizon_mtu > 0.0, "forecast.horizon_mtu must be > 0");
  const double ticks = forecast.horizon_mtu / delta_t();
  check(std::abs(ticks - std::round(ticks)) < 1e-6,
        "forecast.horizon_mtu must be a whole number of observation intervals");
  check(forecast.init == "first" || forecast.init == "last", "forecast.init must be 'first' or 'last'");
  check(forecast.thinning >= 1, "forecast.thinning must be >= 1");
  check(forecast.burn_in_fraction >= 0.0 && forecast.burn_in_fraction < 1.0,
        "forecast.burn_in_fraction must lie in [0, 1)");
  check(!output_dir.empty(), "output_dir must not be empty");
}

std::size_t ExperimentConfig::horizon_ticks() const {
  return static_cast<std::size_t>(std::llround(forecast.horizon_mtu / delta_t()));
}

ClosureConfig ExperimentConfig::closure_config(Variant v) const {
  ClosureConfig c;
  c.variant = v;
  c.K = truth.K;
  c.forcing = truth.F;
  c.history.n_h = closure.n_h;
  c.history.delta_t = delta_t();
  c.input_mode = closure.input_mode;
  return c;
}

MlpArchitecture ExperimentConfig::architecture(Variant v) const {
  return closure_architecture(closure_config(v), closure.hidden_layers, closure.hidden_width, closure.activation);
}

TrainConfig ExperimentConfig::train_config(Variant v) const {
  TrainConfig t = train.base;
  t.n_f = v == Variant::History ? train.n_f_history : train.n_f_instantaneous;
  return t;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Section top(j, "");
  top.text("name", c.name);
  top.count("threads", c.threads);
  top.text("output_dir", c.output_dir);

  if (const json* s = top.sub("truth")) {
    Section r(*s, "truth");
    r.count("K", c.truth.K);
    r.count("J", c.truth.J);
    r.number("F", c.truth.F);
    r.number("h", c.truth.h);
    r.number("b", c.truth.b);
    r.number("c", c.truth.c);
    r.number("dt", c.truth.dt);
    r.number("t_end", c.truth.t_end);
    r.number("spinup", c.truth.spinup);
    r.number("init_x_std", c.truth.init_x_std);
    r.number("init_y_std", c.truth.init_y_std);
    r.count("seed", c.truth.seed);
    r.finish();
  }
  if (const json* s = top.sub("observation")) {
    Section r(*s, "observation");
    r.count("stride", c.observation.stride);
    r.number("noise_fraction", c.observation.noise_fraction);
    r.count("seed", c.observation.seed);
    double delta_t = -1.0;
    r.number("delta_t", delta_t);
    r.finish();
    if (delta_t >= 0.0 && std::abs(delta_t - c.truth.dt * static_cast<double>(c.observation.stride)) > 1e-12) {
      throw ConfigError("observation.delta_t must equal observation.stride * truth.dt");
    }
  }
  if (const json* s = top.sub("closure")) {
    Section r(*s, "closure");
    r.choice("variant", c.closure.variant, variant_from_string);
    r.count("n_h", c.closure.n_h);
    r.count("hidden_layers", c.closure.hidden_layers);
    r.count("hidden_width", c.closure.hidden_width);
    r.choice("activation", c.closure.activation, activation_from_string);
    r.choice("input_mode", c.closure.input_mode, input_mode_from_string);
    r.count("init_seed", c.closure.init_seed);
    r.finish();
  }
  if (const json* s = top.sub("train")) {
    Section r(*s, "train");
    TrainConfig& t = c.train.base;
    r.number("learning_rate", t.learning_rate);
    r.count("batch_size", t.batch_size);
    r.count("n_f_history", c.train.n_f_history);
    r.count("n_f_instantaneous", c.train.n_f_instantaneous);
    r.count("phase1_iters", t.phase1_iters);
    r.count("phase2_iters", t.phase2_iters);
    r.number("adam_beta1", t.adam_beta1);
    r.number("adam_beta2", t.adam_beta2);
    r.number("adam_eps", t.adam_eps);
    r.count("seed", t.seed);
    r.number("divergence_threshold", t.divergence_threshold);
    r.count("divergence_patience", t.divergence_patience);
    r.finish();
  }
  if (const json* s = top.sub("hmc")) {
    Section r(*s, "hmc");
    r.number("step_size", c.hmc.step_size);
    r.count("leapfrog_steps", c.hmc.leapfrog_steps);
    r.count("chain_length", c.hmc.chain_length);
    r.number("alpha1", c.hmc.alpha1);
    r.number("beta1", c.hmc.beta1);
    r.number("alpha2", c.hmc.alpha2);
    r.number("beta2", c.hmc.beta2);
    r.count("seed", c.hmc.seed);
    r.finish();
  }
  if (const json* s = top.sub("forecast")) {
    Section r(*s, "forecast");
    r.number("horizon_mtu", c.forecast.horizon_mtu);
    r.text("init", c.forecast.init);
    r.count("thinning", c.forecast.thinning);
    r.number("burn_in_fraction", c.forecast.burn_in_fraction);
    r.flag("noise_inflation", c.forecast.noise_inflation);
    r.count("noise_seed", c.forecast.noise_seed);
    r.finish();
  }
  top.finish();
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  const TrainConfig& t = c.train.base;
  return json{
      {"name", c.name},
      {"threads", c.threads},
      {"output_dir", c.output_dir},
      {"truth",
       {{"K", c.truth.K}, {"J", c.truth.J}, {"F", c.truth.F}, {"h", c.truth.h}, {"b", c.truth.b}, {"c", c.truth.c},
        {"dt", c.truth.dt}, {"t_end", c.truth.t_end}, {"spinup", c.truth.spinup}, {"init_x_std", c.truth.init_x_std},
        {"init_y_std", c.truth.init_y_std}, {"seed", c.truth.seed}}},
      {"observation",
       {{"stride", c.observation.stride}, {"delta_t", c.delta_t()}, {"noise_fraction", c.observation.noise_fraction},
        {"seed", c.observation.seed}}},
      {"closure",
       {{"variant", to_string(c.closure.variant)}, {"n_h", c.closure.n_h}, {"hidden_layers", c.closure.hidden_layers},
        {"hidden_width", c.closure.hidden_width}, {"activation", to_string(c.closure.activation)},
        {"input_mode", to_string(c.closure.input_mode)}, {"init_seed", c.closure.init_seed}}},
      {"train",
       {{"learning_rate", t.learning_rate}, {"batch_size", t.batch_size}, {"n_f_history", c.train.n_f_history},
        {"n_f_instantaneous", c.train.n_f_instantaneous}, {"phase1_iters", t.phase1_iters},
        {"phase2_iters", t.phase2_iters}, {"adam_beta1", t.adam_beta1}, {"adam_beta2", t.adam_beta2},
        {"adam_eps", t.adam_eps}, {"seed", t.seed}, {"divergence_threshold", t.divergence_threshold},
        {"divergence_patience", t.divergence_patience}}},
      {"hmc",
       {{"step_size", c.hmc.step_size}, {"leapfrog_steps", c.hmc.leapfrog_steps}, {"chain_length", c.hmc.chain_length},
        {"alpha1", c.hmc.alpha1}, {"beta1", c.hmc.beta1}, {"alpha2", c.hmc.alpha2}, {"beta2", c.hmc.beta2},
        {"seed", c.hmc.seed}}},
      {"forecast",
       {{"horizon_mtu", c.forecast.horizon_mtu}, {"init", c.forecast.init}, {"thinning", c.forecast.thinning},
        {"burn_in_fraction", c.forecast.burn_in_fraction}, {"noise_inflation", c.forecast.noise_inflation},
        {"noise_seed", c.forecast.noise_seed}}},
  };
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open configuration file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const ExperimentConfig& cfg) {
  nlohmann::json j = config_to_json(cfg);
  j.erase("output_dir");
  j.erase("threads");
  return sha256_hex(j.dump());
}

}  // namespace l96
