#include "l96/hmc.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace l96 {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

double d_log_gamma_density(double x, double alpha, double beta) {
  return (alpha == 1.0 ? 0.0 : (alpha - 1.0) / x) - beta;
}
}  // namespace

void HmcConfig::validate() const {
  if (!(step_size > 0.0)) throw ConfigError("hmc.step_size must be > 0");
  if (leapfrog_steps < 1) throw ConfigError("hmc.leapfrog_steps must be >= 1");
  if (chain_length < 1) throw ConfigError("hmc.chain_length must be >= 1");
  if (!(alpha1 > 0.0 && beta1 > 0.0 && alpha2 > 0.0 && beta2 > 0.0)) {
    throw ConfigError("hmc: Gamma prior shapes and rates must be > 0");
  }
}

double log_gamma_density(double x, double alpha, double beta) {
  if (!std::isfinite(x)) return -kInf;
  if (alpha == 1.0) {
    if (x < 0.0) return -kInf;
    return std::log(beta) - beta * x;
  }
  if (x <= 0.0) return -kInf;
  return alpha * std::log(beta) - std::lgamma(alpha) + (alpha - 1.0) * std::log(x) - beta * x;
}

double gaussian_log_likelihood(double ssr, std::size_t count, double log_gamma) {
  const double D = static_cast<double>(count);
  return 0.5 * D * log_gamma - 0.5 * std::exp(log_gamma) * ssr - 0.5 * D * std::log(2.0 * std::numbers::pi);
}

double log_likelihood(const ClosureParams& theta, double log_gamma, const ObservationSet& obs,
                      const ClosureConfig& cfg) {
  const OneStepFit fit = one_step_fit(NetworkClosure(theta, cfg), obs, cfg);
  if (fit.blowup) return -kInf;
  return gaussian_log_likelihood(fit.ssr, fit.count, log_gamma);
}

double log_prior(std::span<const double> theta, double log_gamma, double log_lambda, const HmcConfig& cfg) {
  const double g_lambda = log_gamma_density(log_lambda, cfg.alpha1, cfg.beta1);
  const double g_gamma = log_gamma_density(log_gamma, cfg.alpha2, cfg.beta2);
  if (g_lambda == -kInf || g_gamma == -kInf) return -kInf;
  double abs_sum = 0.0;
  for (double t : theta) abs_sum += std::abs(t);
  const double lambda = std::exp(log_lambda);
  const double N = static_cast<double>(theta.size());
  return N * (log_lambda - std::numbers::ln2) - lambda * abs_sum + g_lambda + g_gamma;
}

PotentialFn closure_potential(const MlpArchitecture& arch, const ObservationSet& obs, const ClosureConfig& ccfg,
                              const HmcConfig& hcfg) {
  hcfg.validate();
  ccfg.validate();
  const std::size_t N = arch.parameter_count();
  if (arch.input_dim != ccfg.network_input_dim()) throw ConfigError("hmc: network input does not match the closure");
  return [arch, &obs, ccfg, hcfg, N](std::span<const double> q, std::span<double> grad) -> double {
    if (q.size() != N + 2 || grad.size() != N + 2) throw ConfigError("potential: state has the wrong length");
    const double lg = q[N];
    const double ll = q[N + 1];
    const std::span<const double> theta = q.first(N);
    const double prior = log_prior(theta, lg, ll, hcfg);
    if (prior == -kInf) return kInf;
    const ClosureParams p(arch, std::vector<double>(theta.begin(), theta.end()));
    const double gamma = std::exp(lg);
    std::fill(grad.begin(), grad.end(), 0.0);
    const OneStepFit fit = one_step_fit(NetworkClosure(p, ccfg), obs, ccfg, grad.first(N), 0.5 * gamma);
    if (fit.blowup) return kInf;
    const double D = static_cast<double>(fit.count);
    const double lambda = std::exp(ll);
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      abs_sum += std::abs(theta[i]);
      grad[i] += lambda * static_cast<double>((theta[i] > 0.0) - (theta[i] < 0.0));
    }
    grad[N] = -(0.5 * D - 0.5 * gamma * fit.ssr) - d_log_gamma_density(lg, hcfg.alpha2, hcfg.beta2);
    grad[N + 1] = -(static_cast<double>(N) - lambda * abs_sum) - d_log_gamma_density(ll, hcfg.alpha1, hcfg.beta1);
    const double U = -(gaussian_log_likelihood(fit.ssr, fit.count, lg) + prior);
    for (double g : grad) {
      if (!std::isfinite(g)) return kInf;
    }
    return std::isfinite(U) ? U : kInf;
  };
}

LeapfrogState leapfrog(const PotentialFn& U, const LeapfrogState& start, double eps, std::size_t L) {
  if (!(eps > 0.0)) throw ConfigError("leapfrog: step size must be > 0");
  LeapfrogState s = start;
  if (L == 0) return s;
  const std::size_t n = s.q.size();
  if (s.v.size() != n || s.grad.size() != n) throw ConfigError("leapfrog: state vectors differ in length");
  for (std::size_t i = 0; i < n; ++i) s.v[i] -= 0.5 * eps * s.grad[i];
  for (std::size_t l = 1; l <= L; ++l) {
    for (std::size_t i = 0; i < n; ++i) s.q[i] += eps * s.v[i];
    s.potential = U(s.q, s.grad);
    if (!std::isfinite(s.potential)) {
      s.ok = false;
      return s;
    }
    if (l < L) {
      for (std::size_t i = 0; i < n; ++i) s.v[i] -= eps * s.grad[i];
    }
  }
  for (std::size_t i = 0; i < n; ++i) s.v[i] -= 0.5 * eps * s.grad[i];
  return s;
}

RawChain sample_hmc(const PotentialFn& U, std::vector<double> q0, const HmcConfig& cfg) {
  cfg.validate();
  const std::size_t n = q0.size();
  LeapfrogState cur;
  cur.q = std::move(q0);
  cur.grad.assign(n, 0.0);
  cur.potential = U(cur.q, cur.grad);
  if (!std::isfinite(cur.potential)) throw ConfigError("hmc: the initial point has zero posterior density");

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  constexpr std::size_t kWindow = 200;

  RawChain out;
  out.q.reserve(cfg.chain_length);
  std::size_t accepted = 0;
  std::size_t window_accepted = 0;
  for (std::size_t s = 0; s < cfg.chain_length; ++s) {
    cur.v.resize(n);
    for (double& v : cur.v) v = normal(rng);
    double kinetic0 = 0.0;
    for (double v : cur.v) kinetic0 += 0.5 * v * v;
    const LeapfrogState prop = leapfrog(U, cur, cfg.step_size, cfg.leapfrog_steps);
    const double u = unif(rng);
    bool accept = false;
    if (prop.ok) {
      double kinetic1 = 0.0;
      for (double v : prop.v) kinetic1 += 0.5 * v * v;
      const double dH = (cur.potential + kinetic0) - (prop.potential + kinetic1);
      accept = std::isfinite(dH) && std::log(u) < dH;
    }
    if (accept) {
      cur.q = prop.q;
      cur.grad = prop.grad;
      cur.potential = prop.potential;
      ++accepted;
      ++window_accepted;
    }
    out.q.push_back(cur.q);
    out.potential.push_back(cur.potential);
    out.accepted.push_back(accept ? 1 : 0);
    if ((s + 1) % kWindow == 0) {
      if (static_cast<double>(window_accepted) < 0.01 * kWindow) {
        out.warnings.push_back("acceptance below 1% over steps " + std::to_string(s + 1 - kWindow) + ".." +
                               std::to_string(s) + "; consider a smaller step size");
      }
      window_accepted = 0;
    }
  }
  out.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(cfg.chain_length);
  return out;
}

Chain run_chain(const TrainReport& init, const ObservationSet& obs, const ClosureConfig& ccfg, const HmcConfig& hcfg) {
  hcfg.validate();
  if (!(init.residual_variance > 0.0) || !std::isfinite(init.residual_variance)) {
    throw ConfigError("hmc: residual variance of the trained model must be positive and finite");
  }
  const MlpArchitecture& arch = init.final_params.arch;
  const std::size_t N = arch.parameter_count();
  std::vector<double> q0 = init.final_params.flat;
  for (double v : q0) {
    if (!std::isfinite(v)) throw ConfigError("hmc: initial parameters are not finite");
  }
  q0.push_back(-std::log(init.residual_variance));
  q0.push_back(0.0);
  if (log_gamma_density(q0[N], hcfg.alpha2, hcfg.beta2) == -kInf) {
    throw ConfigError("hmc: log gamma = " + std::to_string(q0[N]) +
                      " lies outside the Gamma prior support (residual variance must be < 1)");
  }
  if (log_gamma_density(0.0, hcfg.alpha1, hcfg.beta1) == -kInf) {
    throw ConfigError("hmc: lambda = 1 lies outside the Gamma prior support unless hmc.alpha1 = 1");
  }

  const RawChain raw = sample_hmc(closure_potential(arch, obs, ccfg, hcfg), std::move(q0), hcfg);
  Chain chain;
  chain.config = hcfg;
  chain.arch = arch;
  chain.acceptance_rate = raw.acceptance_rate;
  chain.warnings = raw.warnings;
  chain.samples.reserve(raw.q.size());
  for (std::size_t s = 0; s < raw.q.size(); ++s) {
    HmcSample smp;
    smp.theta.assign(raw.q[s].begin(), raw.q[s].begin() + static_cast<std::ptrdiff_t>(N));
    smp.prec.log_gamma = raw.q[s][N];
    smp.prec.log_lambda = raw.q[s][N + 1];
    smp.log_posterior = -raw.potential[s];
    smp.accepted = raw.accepted[s] != 0;
    chain.samples.push_back(std::move(smp));
  }
  return chain;
}

const HmcSample& map_estimate(const Chain& chain, std::size_t first, std::size_t stride) {
  if (stride < 1) throw ConfigError("map_estimate: stride must be >= 1");
  if (first >= chain.samples.size()) throw ConfigError("map_estimate: no samples to choose from");
  std::size_t best = first;
  for (std::size_t i = first; i < chain.samples.size(); i += stride) {
    if (chain.samples[i].log_posterior > chain.samples[best].log_posterior) best = i;
  }
  return chain.samples[best];
}

}  // namespace l96
