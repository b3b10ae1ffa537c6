// Hyperpriors: exponential priors on curvature precisions elicited from a
// prediction interval, correlation hyperpriors, the informative prior on the
// population-mean baseline, and prior-predictive simulation.
#pragma once

#include "sapc/covariance.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace sapc {

/// Parameter blocks of the canonical vector.
enum class Block { baseline = 0, age = 1, period = 2, cohort = 3 };
inline constexpr std::array<Block, 4> kBlocks = {Block::baseline, Block::age, Block::period, Block::cohort};
inline constexpr int index(Block b) { return static_cast<int>(b); }
std::string to_string(Block b);

struct PrecisionElicitation {
  double epsilon;  // half-width of the log relative risk
  double q;        // tail probability
};

/// (epsilon / t_{1-q/2, 2})^2 / 2.
double elicit_precision_rate(const PrecisionElicitation& e);

struct BaselineMeanPrior {
  Eigen::Vector3d mean{std::log(0.005), 0.3, -0.1};
  Eigen::Vector3d variance{1.0, 0.1, 0.1};

  /// Central `level` interval of exp(component), the rate or rate ratio scale.
  std::pair<double, double> exp_interval(int component, double level = 0.95) const;
  double logpdf(const Eigen::Vector3d& nu0) const;
};

struct PriorConfig {
  double q = 0.05;
  /// Indexed by Block: baseline, age, period, cohort.
  std::array<double, 4> epsilon{std::log(1.05), std::log(1.2), std::log(1.1), std::log(1.01)};
  BaselineMeanPrior baseline_mean;
  /// Variance of the normal prior on log((1 + rho (R - 1)) / (1 - rho)).
  double exchangeable_variance = 5.0;
  /// PC prior calibration Pr(rho < bym2_u) = bym2_alpha.
  double bym2_u = 0.5;
  double bym2_alpha = 0.5;

  double rate(Block b) const { return elicit_precision_rate({epsilon[index(b)], q}); }
};

/// log density of the exchangeable correlation, including the Jacobian of
/// the logit-type transform.
double exchangeable_rho_logpdf(double rho, int strata, double variance);
/// zeta = log((1 + rho (R-1)) / (1 - rho)) and its inverse.
double exchangeable_to_real(double rho, int strata);
double exchangeable_from_real(double zeta, int strata);

/// Penalized-complexity prior on the BYM2 mixing weight for one graph.
class PcPriorBym2 {
 public:
  explicit PcPriorBym2(const ScaledIcar& icar, double u = 0.5, double alpha = 0.5);

  /// sqrt(2 KLD) of N(0, (1-rho) I + rho Q*^-) from N(0, I).
  double distance(double rho) const;
  double distance_derivative(double rho) const;
  double lambda() const { return lambda_; }
  double log_density(double rho) const;
  /// Density of logit(rho), stable far into either tail.
  double log_density_logit(double theta) const;
  double cdf(double rho) const;
  double quantile(double p) const;

 private:
  // omr is 1 - rho, passed separately to keep precision near rho = 1
  double kld(double rho, double omr) const;
  double kld_derivative(double rho, double omr) const;
  double derivative_at(double rho, double omr) const;

  Eigen::VectorXd eigen_minus_one_;
  double lambda_ = 0.0;
};

double pc_prior_bym2(double rho, const PcPriorBym2& prior);
double pc_prior_bym2(double rho, const ScaledIcar& icar);

struct HyperParameters {
  std::array<std::optional<double>, 4> tau;
  std::array<std::optional<double>, 4> rho;
  std::optional<Eigen::Vector3d> nu0;

  double tau_of(Block b) const;
  double rho_of(Block b) const;
};

/// Which hyperparameters a model carries and how their priors look.
struct HyperpriorLayout {
  std::array<bool, 4> has_tau{};
  /// independent means "no correlation parameter" for the block.
  std::array<StructureKind, 4> rho_kind{StructureKind::independent, StructureKind::independent,
                                        StructureKind::independent, StructureKind::independent};
  bool has_nu0 = false;
  int strata = 1;
  std::shared_ptr<const PcPriorBym2> pc;
};

/// Sum of independent component log densities. Throws std::domain_error
/// when a value lies outside its domain or a required value is missing.
double hyperprior_logpdf(const HyperParameters& eta, const HyperpriorLayout& layout, const PriorConfig& config);

HyperParameters sample_hyperparameters(const HyperpriorLayout& layout, const PriorConfig& config, std::mt19937_64& rng);

class LatentModel;
struct MortalityDataset;

struct PriorPredictiveSummary {
  int sims = 0;
  int degenerate = 0;
  std::vector<double> max_count;  // non-degenerate sims only
  std::vector<double> min_count;
  std::optional<double> frac_max_exceeds;
  std::optional<double> frac_min_below;
  double observed_max = 0.0;
  double observed_min = 0.0;
};

/// Draws hyperparameters, then latent curvatures, then Poisson counts on the
/// observed cells of `data`. A draw whose log rate exceeds `max_log_rate`
/// anywhere is counted as degenerate and excluded from the extrema.
PriorPredictiveSummary sample_prior_predictive(const LatentModel& model, const MortalityDataset& data,
                                               const PriorConfig& config, int n_sims, std::uint64_t seed,
                                               bool compare_observed = true, double max_log_rate = 30.0);

/// Per-component seed stream derived from a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

}  // namespace sapc
