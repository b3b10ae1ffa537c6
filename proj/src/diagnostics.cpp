#include "sapc/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace sapc {

double pit_value(const Eigen::Ref<const Eigen::VectorXd>& samples, double y) {
  if (samples.size() == 0) throw std::invalid_argument("pit: empty predictive sample");
  Eigen::Index at_most = 0, below = 0;
  for (Eigen::Index s = 0; s < samples.size(); ++s) {
    if (samples(s) <= y) ++at_most;
    if (samples(s) <= y - 1.0) ++below;
  }
  const auto n = static_cast<double>(samples.size());
  return 0.5 * (static_cast<double>(at_most) / n + static_cast<double>(below) / n);
}

std::vector<double> reflected_kde(const std::vector<double>& values, const std::vector<double>& grid) {
  std::vector<double> out(grid.size(), 0.0);
  const auto n = values.size();
  if (n == 0) return out;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  const double iqr = quantile(values, 0.75) - quantile(values, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd > 0.0 ? sd : 0.05;
  const double h = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);

  const double norm = 1.0 / (static_cast<double>(n) * h * std::sqrt(2.0 * std::numbers::pi));
  auto kernel = [&](double u) { return std::exp(-0.5 * u * u); };
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double acc = 0.0;
    for (double v : values)
      acc += kernel((grid[g] - v) / h) + kernel((grid[g] + v) / h) + kernel((grid[g] - 2.0 + v) / h);
    out[g] = acc * norm;
  }
  return out;
}

PitResult pit(const Eigen::MatrixXd& samples, const Eigen::VectorXd& observed, int bins, int grid_points) {
  if (samples.cols() != observed.size()) throw std::invalid_argument("pit: sample columns must match observations");
  if (samples.rows() < 100) throw std::invalid_argument("pit: need at least 100 predictive samples per cell");
  if (bins < 1 || grid_points < 2) throw std::invalid_argument("pit: bad histogram or grid size");
  PitResult out;
  out.values.reserve(static_cast<std::size_t>(observed.size()));
  for (Eigen::Index c = 0; c < observed.size(); ++c) out.values.push_back(pit_value(samples.col(c), observed(c)));
  out.histogram.assign(static_cast<std::size_t>(bins), 0);
  for (double v : out.values) {
    const int b = std::min(bins - 1, static_cast<int>(v * bins));
    ++out.histogram[static_cast<std::size_t>(b)];
  }
  for (int g = 0; g < grid_points; ++g) out.grid.push_back(static_cast<double>(g) / (grid_points - 1));
  out.density = reflected_kde(out.values, out.grid);
  return out;
}

double ks_uniform_distance(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("ks_uniform_distance: no values");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  double d = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::clamp(values[i], 0.0, 1.0);
    d = std::max({d, static_cast<double>(i + 1) / n - v, v - static_cast<double>(i) / n});
  }
  return d;
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("quantile: no values");
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

void summarize_columns(const Eigen::MatrixXd& m, Eigen::VectorXd& median, Eigen::VectorXd& lower,
                       Eigen::VectorXd& upper) {
  median.resize(m.cols());
  lower.resize(m.cols());
  upper.resize(m.cols());
  std::vector<double> col(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    Eigen::VectorXd::Map(col.data(), m.rows()) = m.col(c);
    median(c) = quantile(col, 0.5);
    lower(c) = quantile(col, 0.025);
    upper(c) = quantile(col, 0.975);
  }
}

}  // namespace

HindcastResult hindcast(const Eigen::MatrixXd& log_rate_samples, const std::vector<int>& cells,
                        const Eigen::VectorXd& exposure, std::uint64_t seed) {
  if (log_rate_samples.rows() == 0) throw std::invalid_argument("hindcast: no posterior samples");
  if (exposure.size() != log_rate_samples.cols())
    throw std::invalid_argument("hindcast: exposure must cover every stacked cell");
  HindcastResult out;
  out.cells = cells;
  out.samples.resize(log_rate_samples.rows(), static_cast<Eigen::Index>(cells.size()));
  std::mt19937_64 rng(derive_seed(seed, 4));
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const int c = cells[k];
    if (c < 0 || c >= log_rate_samples.cols()) throw std::out_of_range("hindcast: target cell outside the grid");
    if (!(exposure(c) > 0.0)) throw std::invalid_argument("hindcast: target cell has no exposure");
    for (Eigen::Index s = 0; s < log_rate_samples.rows(); ++s) {
      const double mean = exposure(c) * std::exp(log_rate_samples(s, c));
      if (!(mean < 1e15)) throw std::overflow_error("hindcast: Poisson mean overflows");
      out.samples(s, static_cast<Eigen::Index>(k)) =
          static_cast<double>(std::poisson_distribution<long long>(mean)(rng));
    }
  }
  summarize_columns(out.samples, out.median, out.lower, out.upper);
  return out;
}

HindcastResult hindcast(const ModelFit& fit, const MortalityDataset& data, const std::vector<int>& cells,
                        std::uint64_t seed) {
  return hindcast(fit.posterior.log_rate_samples(fit.model), cells, data.exposure, seed);
}

Eigen::VectorXd relative_risk_curve(const ApcEffects& first, const ApcEffects& second, Block block, bool normalize) {
  const Eigen::VectorXd* a = nullptr;
  const Eigen::VectorXd* b = nullptr;
  switch (block) {
    case Block::period: a = &first.period; b = &second.period; break;
    case Block::cohort: a = &first.cohort; b = &second.cohort; break;
    default: throw std::invalid_argument("relative_risk_curve: block must be period or cohort");
  }
  if (a->size() != b->size() || a->size() == 0) throw std::invalid_argument("relative_risk_curve: size mismatch");
  Eigen::VectorXd log_rr = (first.level - second.level) + (*a - *b).array();
  if (normalize) log_rr.array() -= log_rr(0);
  Eigen::VectorXd rr = log_rr.array().exp();
  if (normalize) rr(0) = 1.0;
  return rr;
}

bool relative_risk_licensed(const SharingPattern& pattern, Block block) {
  if (block != Block::period && block != Block::cohort) return false;
  return pattern.shares(Block::baseline) && pattern.shares(Block::age) && !pattern.shares(block);
}

RelativeRiskCurve cross_strata_rr(const ModelFit& fit, Block block, int r1, int r2) {
  const LatentModel& model = fit.model;
  if (!relative_risk_licensed(model.pattern(), block))
    throw std::invalid_argument("cross_strata_rr: pattern " + model.pattern().name() + " does not license a " +
                                to_string(block) + " contrast");
  if (r1 < 0 || r2 < 0 || r1 >= model.strata() || r2 >= model.strata() || r1 == r2)
    throw std::out_of_range("cross_strata_rr: need two distinct strata");
  const Eigen::MatrixXd& xs = fit.posterior.samples;
  if (xs.rows() == 0) throw std::invalid_argument("cross_strata_rr: fit has no posterior samples");

  const int len = block == Block::period ? model.grid().periods() : model.grid().cohorts();
  Eigen::MatrixXd curves(xs.rows(), len);
  for (Eigen::Index s = 0; s < xs.rows(); ++s) {
    const Eigen::VectorXd xi = xs.row(s).transpose();
    const ApcEffects e1 = effects_from_canonical(model.grid(), model.baseline(), model.stratum_canonical(xi, r1));
    const ApcEffects e2 = effects_from_canonical(model.grid(), model.baseline(), model.stratum_canonical(xi, r2));
    curves.row(s) = relative_risk_curve(e1, e2, block, true).transpose();
  }
  RelativeRiskCurve out{block, r1, r2, {}, {}, {}};
  summarize_columns(curves, out.median, out.lower, out.upper);
  out.median(0) = out.lower(0) = out.upper(0) = 1.0;
  return out;
}

}  // namespace sapc
