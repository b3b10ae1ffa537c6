// Synthetic data from a fully specified stratified model.
#pragma once

#include "sapc/model.hpp"

#include <cstdint>
#include <vector>

namespace sapc {

struct SyntheticData {
  MortalityDataset data;
  Eigen::VectorXd xi;         // true free latent vector
  Eigen::VectorXd log_rates;  // stacked true log rates
  Eigen::VectorXd counts;     // full counts, including cells later masked
};

/// Draws xi from the model prior at `eta`, then Poisson counts on every
/// cell. A shared baseline is pinned to the prior mean of the population
/// baseline, since single draws from that prior are often implausible. `exposure` is either a single value broadcast to all cells or a
/// stacked vector of length A*T*R.
SyntheticData simulate(const LatentModel& model, const HyperParameters& eta, const Eigen::VectorXd& exposure,
                       std::uint64_t seed, std::vector<std::string> strata = {});

/// Same, with the latent vector fixed.
SyntheticData simulate_from_latent(const LatentModel& model, const Eigen::VectorXd& xi,
                                   const Eigen::VectorXd& exposure, std::uint64_t seed,
                                   std::vector<std::string> strata = {});

/// Hyperparameters that give moderate, realistic surfaces: small
/// curvatures, positive correlations where a correlation is present, and
/// the prior mean for the population baseline.
HyperParameters default_simulation_hyperparameters(const LatentModel& model, double rho = 0.5);

/// Marks cells unobserved while keeping their exposure, which hindcasting
/// needs. Returns the stacked positions that were masked.
std::vector<int> mask_cells(MortalityDataset& data, const std::vector<int>& cells);

/// Masks the first `periods` periods of stratum r.
std::vector<int> mask_early_periods(MortalityDataset& data, int r, int periods);

/// Masks a random fraction of cells (at least one).
std::vector<int> mask_random(MortalityDataset& data, double fraction, std::uint64_t seed);

}  // namespace sapc
