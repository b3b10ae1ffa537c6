#include "sapc/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace sapc {

namespace {

Eigen::VectorXd broadcast_exposure(const LatentModel& model, const Eigen::VectorXd& exposure) {
  if (exposure.size() == 1) return Eigen::VectorXd::Constant(model.cells(), exposure(0));
  if (exposure.size() != model.cells())
    throw std::invalid_argument("simulate: exposure must be a scalar or one value per cell");
  return exposure;
}

}  // namespace

SyntheticData simulate_from_latent(const LatentModel& model, const Eigen::VectorXd& xi,
                                   const Eigen::VectorXd& exposure, std::uint64_t seed,
                                   std::vector<std::string> strata) {
  if (xi.size() != model.free_dim()) throw std::invalid_argument("simulate: latent vector has the wrong length");
  if (strata.empty())
    for (int r = 0; r < model.strata(); ++r) strata.push_back("S" + std::to_string(r + 1));
  if (static_cast<int>(strata.size()) != model.strata())
    throw std::invalid_argument("simulate: stratum names do not match the model");

  const Eigen::VectorXd n = broadcast_exposure(model, exposure);
  if ((n.array() <= 0.0).any()) throw std::invalid_argument("simulate: exposures must be positive");

  MortalityDataset data(model.grid(), std::move(strata));
  const Eigen::VectorXd mu = model.log_rates(xi);
  std::mt19937_64 rng(derive_seed(seed, 2));
  Eigen::VectorXd counts(mu.size());
  for (Eigen::Index c = 0; c < mu.size(); ++c) {
    const double mean = n(c) * std::exp(mu(c));
    if (!(mean < 1e15)) throw std::overflow_error("simulate: Poisson mean overflows");
    counts(c) = static_cast<double>(std::poisson_distribution<long long>(mean)(rng));
  }
  data.counts = counts;
  data.exposure = n;
  std::fill(data.observed.begin(), data.observed.end(), std::uint8_t{1});
  return SyntheticData{std::move(data), xi, mu, counts};
}

SyntheticData simulate(const LatentModel& model, const HyperParameters& eta, const Eigen::VectorXd& exposure,
                       std::uint64_t seed, std::vector<std::string> strata) {
  std::mt19937_64 rng(derive_seed(seed, 1));
  Eigen::VectorXd xi = model.prior(eta).sample(rng);
  const BlockLayout& base = model.block(Block::baseline);
  if (base.shared) xi.segment<3>(base.offset) = model.priors().baseline_mean.mean;
  return simulate_from_latent(model, xi, exposure, seed, std::move(strata));
}

HyperParameters default_simulation_hyperparameters(const LatentModel& model, double rho) {
  const HyperpriorLayout hl = model.hyper_layout();
  HyperParameters eta;
  const std::array<double, 4> tau{400.0, 400.0, 2500.0, 10000.0};
  for (Block b : kBlocks) {
    const int k = index(b);
    if (hl.has_tau[k]) eta.tau[k] = tau[k];
    if (hl.rho_kind[k] != StructureKind::independent) eta.rho[k] = rho;
  }
  if (hl.has_nu0) eta.nu0 = model.priors().baseline_mean.mean;
  return eta;
}

std::vector<int> mask_cells(MortalityDataset& data, const std::vector<int>& cells) {
  std::vector<int> out;
  for (int c : cells) {
    if (c < 0 || c >= data.size()) throw std::out_of_range("mask_cells: cell outside the grid");
    if (data.observed[c]) out.push_back(c);
    data.observed[c] = 0;
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> mask_early_periods(MortalityDataset& data, int r, int periods) {
  if (r < 0 || r >= data.strata_count()) throw std::out_of_range("mask_early_periods: unknown stratum");
  if (periods < 1 || periods >= data.grid.periods())
    throw std::invalid_argument("mask_early_periods: need 1 <= periods < T");
  std::vector<int> cells;
  for (int j = 1; j <= periods; ++j)
    for (int i = 1; i <= data.grid.ages(); ++i) cells.push_back(data.position(r, i, j));
  return mask_cells(data, cells);
}

std::vector<int> mask_random(MortalityDataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("mask_random: fraction must be in (0, 1)");
  std::vector<int> cells;
  for (int c = 0; c < data.size(); ++c)
    if (data.observed[c]) cells.push_back(c);
  std::mt19937_64 rng(derive_seed(seed, 3));
  std::shuffle(cells.begin(), cells.end(), rng);
  const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * cells.size())));
  cells.resize(std::min(keep, cells.size()));
  return mask_cells(data, cells);
}

}  // namespace sapc
