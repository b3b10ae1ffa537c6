// Posterior inference for a LatentModel: Newton mode finding, the Laplace
// approximation of the hyperparameter marginal, simplex hyperparameter
// search, Gaussian posterior sampling, and an MCMC validation oracle.
#pragma once

#include "sapc/model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sapc {

/// A numerical procedure failed (non-convergence, indefinite Hessian,
/// overflow). Carries the last iterate when there is one.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what, Eigen::VectorXd last = {})
      : std::runtime_error(what), last_(std::move(last)) {}
  const Eigen::VectorXd& last_iterate() const { return last_; }

 private:
  Eigen::VectorXd last_;
};

struct ModeOptions {
  double grad_tol = 1e-8;
  double rel_tol = 1e-12;
  int max_iter = 100;
  int max_halvings = 30;
  LikelihoodKind likelihood = LikelihoodKind::poisson;
};

struct ModeResult {
  Eigen::VectorXd xi;
  Eigen::MatrixXd hessian;  // negative Hessian of the log posterior
  Eigen::LLT<Eigen::MatrixXd> factor;
  double loglik = 0.0;
  double log_prior = 0.0;
  int iterations = 0;

  double objective() const { return loglik + log_prior; }
};

/// Starting point: zero curvatures, baseline coordinates from crude
/// log(sum y / sum N) at the baseline cells, falling back to the prior mean.
Eigen::VectorXd initial_latent(const LatentModel& model, const MortalityDataset& data, const HyperParameters& eta);

ModeResult conditional_mode(const LatentModel& model, const HyperParameters& eta, const MortalityDataset& data,
                            const std::optional<Eigen::VectorXd>& init = std::nullopt, const ModeOptions& options = {});

struct LaplaceResult {
  double log_marginal = 0.0;
  ModeResult mode;
};

LaplaceResult laplace_approximation(const LatentModel& model, const HyperParameters& eta, const MortalityDataset& data,
                                    const std::optional<Eigen::VectorXd>& init = std::nullopt,
                                    const ModeOptions& options = {});

/// loglik + log prior at the mode - 1/2 logdet(H) + (d/2) log 2 pi + log hyperprior.
double laplace_log_marginal(const LatentModel& model, const HyperParameters& eta, const MortalityDataset& data,
                            const ModeOptions& options = {});

struct OptimizeOptions {
  int max_evals = 2000;
  /// Stop once the simplex characteristic size falls below this.
  double tol = 1e-6;
  double initial_step = 0.5;
  ModeOptions mode;
};

struct HyperFit {
  HyperParameters eta;
  Eigen::VectorXd theta;
  double objective = 0.0;
  double initial_objective = 0.0;
  int evaluations = 0;
  bool converged = false;  // false: budget exhausted, best point still returned
  Eigen::VectorXd latent_mode;
};

/// Data-driven starting hyperparameters: a lightly penalized fit gives
/// moment estimates of the precisions and the baseline mean; correlations
/// start at a small positive value.
HyperParameters initial_hyperparameters(const LatentModel& model, const MortalityDataset& data,
                                        const ModeOptions& options = {});

/// Nelder-Mead (GSL nmsimplex2) on the unconstrained coordinates.
HyperFit optimize_hyperparameters(const LatentModel& model, const MortalityDataset& data,
                                  const HyperParameters& init, const OptimizeOptions& options = {});

struct PosteriorFit {
  HyperParameters eta_hat;
  Eigen::VectorXd latent_mean;
  Eigen::MatrixXd latent_precision;
  Eigen::MatrixXd samples;  // n_samples x free_dim
  double log_marginal = 0.0;

  int sample_count() const { return static_cast<int>(samples.rows()); }
  /// n_samples x cells matrix of design * xi_s.
  Eigen::MatrixXd log_rate_samples(const LatentModel& model) const;
};

/// Empirical-Bayes plug-in: draws from N(xi_hat, H^-1) at eta_hat.
PosteriorFit sample_posterior(const LatentModel& model, const HyperParameters& eta_hat, const MortalityDataset& data,
                              int n, std::uint64_t seed, const ModeOptions& options = {});

/// Mixture over an axial design of hyperparameter points around the optimum
/// (centre plus +/- `step` standard deviations along each principal axis of
/// the negative Hessian of the Laplace objective), weighted by exp(objective).
PosteriorFit sample_posterior_axial(const LatentModel& model, const HyperFit& fit, const MortalityDataset& data, int n,
                                    std::uint64_t seed, double step = 1.0, const ModeOptions& options = {});

struct McmcOptions {
  int iterations = 20000;
  int burn_in = 5000;
  int thin = 5;
  std::uint64_t seed = 1;
  double ess_threshold = 100.0;
};

struct McmcResult {
  Eigen::MatrixXd latent;  // kept draws x free_dim
  Eigen::MatrixXd theta;   // kept draws x hyper_dim (unconstrained)
  double latent_acceptance = 0.0;
  double hyper_acceptance = 0.0;
  double min_ess = 0.0;
  bool poor_mixing = false;
};

/// Metropolis-within-blocks over (latent, hyperparameters). The latent block
/// is a random walk preconditioned by the Hessian at the current
/// hyperparameters; the hyperparameter block moves theta by a random walk on
/// the unconstrained scale and redraws the latent vector from the Gaussian
/// approximation at the proposed theta, with the exact Metropolis-Hastings
/// correction. Both proposal scales adapt during burn-in.
McmcResult mcmc_oracle(const LatentModel& model, const MortalityDataset& data, const HyperParameters& init,
                       const McmcOptions& options = {}, LikelihoodKind likelihood = LikelihoodKind::poisson);

/// Effective sample size of one chain via Geyer's initial positive sequence.
double effective_sample_size(const Eigen::VectorXd& chain);

}  // namespace sapc
