#include "sapc/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace sapc {

PriorPredictiveSummary sample_prior_predictive(const LatentModel& model, const MortalityDataset& data,
                                               const PriorConfig& config, int n_sims, std::uint64_t seed,
                                               bool compare_observed, double max_log_rate) {
  if (n_sims < 1) throw std::invalid_argument("sample_prior_predictive: n_sims must be positive");
  if (data.strata_count() != model.strata() || !(data.grid == model.grid()))
    throw std::invalid_argument("sample_prior_predictive: dataset does not match the model grid");

  std::vector<int> cells;
  for (int c = 0; c < data.size(); ++c) {
    if (!data.observed[c]) continue;
    if (!(data.exposure(c) > 0.0))
      throw std::invalid_argument("sample_prior_predictive: observed cell without positive exposure");
    cells.push_back(c);
  }
  if (cells.empty()) throw std::invalid_argument("sample_prior_predictive: no observed cells");

  PriorPredictiveSummary out;
  out.sims = n_sims;
  out.observed_max = -std::numeric_limits<double>::infinity();
  out.observed_min = std::numeric_limits<double>::infinity();
  for (int c : cells) {
    out.observed_max = std::max(out.observed_max, data.counts(c));
    out.observed_min = std::min(out.observed_min, data.counts(c));
  }

  const HyperpriorLayout layout = model.hyper_layout();
  // Poisson means beyond this lose integer precision in a double.
  constexpr double kMaxMean = 1e15;

  for (int s = 0; s < n_sims; ++s) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
    const HyperParameters eta = sample_hyperparameters(layout, config, rng);
    const Eigen::VectorXd xi = model.prior(eta).sample(rng);
    const Eigen::VectorXd mu = model.log_rates(xi);

    bool degenerate = false;
    double hi = -std::numeric_limits<double>::infinity();
    double lo = std::numeric_limits<double>::infinity();
    for (int c : cells) {
      const double mean = data.exposure(c) * std::exp(mu(c));
      if (!std::isfinite(mu(c)) || mu(c) > max_log_rate || !(mean < kMaxMean)) {
        degenerate = true;
        break;
      }
      const double y = static_cast<double>(std::poisson_distribution<long long>(mean)(rng));
      hi = std::max(hi, y);
      lo = std::min(lo, y);
    }
    if (degenerate) {
      ++out.degenerate;
      continue;
    }
    out.max_count.push_back(hi);
    out.min_count.push_back(lo);
  }

  if (compare_observed && !out.max_count.empty()) {
    const auto n = static_cast<double>(out.max_count.size());
    out.frac_max_exceeds =
        std::count_if(out.max_count.begin(), out.max_count.end(), [&](double v) { return v > out.observed_max; }) / n;
    out.frac_min_below =
        std::count_if(out.min_count.begin(), out.min_count.end(), [&](double v) { return v < out.observed_min; }) / n;
  }
  return out;
}

}  // namespace sapc
