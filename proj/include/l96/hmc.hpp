#pragma once

// Hamiltonian Monte Carlo over (theta, log gamma, log lambda) with a teacher-forced
// Gaussian likelihood, a Laplace prior on theta and Gamma priors on the log-precisions.

#include "l96/closure.hpp"
#include "l96/train.hpp"
#include "l96/truth.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace l96 {

struct PrecisionParams {
  double log_gamma = 0.0;
  double log_lambda = 0.0;
};

struct HmcConfig {
  double step_size = 1e-4;
  std::size_t leapfrog_steps = 10;
  std::size_t chain_length = 4000;
  double alpha1 = 1.0, beta1 = 1.0;  // prior on log lambda
  double alpha2 = 1.0, beta2 = 1.0;  // prior on log gamma
  std::uint64_t seed = 0;

  void validate() const;
};

struct HmcSample {
  std::vector<double> theta;
  PrecisionParams prec;
  double log_posterior = 0.0;
  bool accepted = false;
};

struct Chain {
  std::vector<HmcSample> samples;
  double acceptance_rate = 0.0;
  HmcConfig config;
  MlpArchitecture arch;
  std::vector<std::string> warnings;
};

/// alpha log beta - lgamma(alpha) + (alpha - 1) log x - beta x on x > 0 (x >= 0 when
/// alpha = 1), -infinity elsewhere.
double log_gamma_density(double x, double alpha, double beta);

/// (D/2) log gamma - (gamma/2) SSR - (D/2) log 2 pi for a given residual sum.
double gaussian_log_likelihood(double ssr, std::size_t count, double log_gamma);

/// Teacher-forced one-step log-likelihood of all valid targets. -infinity on blowup.
double log_likelihood(const ClosureParams& theta, double log_gamma, const ObservationSet& obs,
                      const ClosureConfig& cfg);

/// N log(lambda/2) - lambda sum|theta_i| + log Gam(log lambda) + log Gam(log gamma).
double log_prior(std::span<const double> theta, double log_gamma, double log_lambda, const HmcConfig& cfg);

/// U(q) with its gradient written into `grad` (same length as q). Returns +infinity to
/// signal a rejected point; `grad` is then unspecified.
using PotentialFn = std::function<double(std::span<const double> q, std::span<double> grad)>;

/// U = -(log likelihood + log prior) over q = [theta..., log gamma, log lambda].
PotentialFn closure_potential(const MlpArchitecture& arch, const ObservationSet& obs, const ClosureConfig& ccfg,
                              const HmcConfig& hcfg);

struct LeapfrogState {
  std::vector<double> q, v;
  double potential = 0.0;
  std::vector<double> grad;  // dU/dq at q
  bool ok = true;
};

/// L iterations of half kick / drift / half kick with unit mass. `start` must carry U and
/// its gradient at start.q. L = 0 returns the start unchanged.
LeapfrogState leapfrog(const PotentialFn& U, const LeapfrogState& start, double eps, std::size_t L);

struct RawChain {
  std::vector<std::vector<double>> q;
  std::vector<double> potential;
  std::vector<char> accepted;
  double acceptance_rate = 0.0;
  std::vector<std::string> warnings;
};

/// Generic sampler: one momentum draw, leapfrog and Metropolis test on H = U + |v|^2/2 per
/// step; records the state after every step.
RawChain sample_hmc(const PotentialFn& U, std::vector<double> q0, const HmcConfig& cfg);

/// Chain started at the trained parameters with gamma = 1/residual_variance, lambda = 1.
Chain run_chain(const TrainReport& init, const ObservationSet& obs, const ClosureConfig& ccfg, const HmcConfig& hcfg);

/// Sample with the largest stored log-posterior among samples first, first + stride, ...
/// Ties keep the earliest. Throws on an empty selection.
const HmcSample& map_estimate(const Chain& chain, std::size_t first = 0, std::size_t stride = 1);

}  // namespace l96
