// Predictive checks on a fitted model: PIT for counts, hindcasting of
// masked cells, and cross-strata relative-risk curves.
#pragma once

#include "sapc/selection.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace sapc {

struct PitResult {
  std::vector<double> values;   // one per evaluated cell, in [0, 1]
  std::vector<int> histogram;   // counts over equal bins of [0, 1]
  std::vector<double> grid;     // evaluation points of the smoothed density
  std::vector<double> density;  // kernel density over `grid`
};

/// 0.5 [F(y) + F(y - 1)] for the empirical CDF F of `samples`.
double pit_value(const Eigen::Ref<const Eigen::VectorXd>& samples, double y);

/// Column c of `samples` holds predictive count draws for observation y(c).
/// Requires at least 100 draws per cell.
PitResult pit(const Eigen::MatrixXd& samples, const Eigen::VectorXd& observed, int bins = 20, int grid_points = 101);

/// Gaussian kernel density on [0, 1] with Silverman's bandwidth, reflected
/// at both boundaries.
std::vector<double> reflected_kde(const std::vector<double>& values, const std::vector<double>& grid);

/// Kolmogorov-Smirnov distance between the empirical CDF of `values` and
/// the uniform distribution on [0, 1].
double ks_uniform_distance(std::vector<double> values);

struct HindcastResult {
  std::vector<int> cells;   // stacked positions
  Eigen::MatrixXd samples;  // n_samples x cells.size() counts
  Eigen::VectorXd median;
  Eigen::VectorXd lower;    // 2.5%
  Eigen::VectorXd upper;    // 97.5%
};

/// Draws count ~ Poisson(exposure * exp(mu_s)) for each log-rate sample s
/// (rows of `log_rate_samples`, stacked cells as columns) and target cell.
HindcastResult hindcast(const Eigen::MatrixXd& log_rate_samples, const std::vector<int>& cells,
                        const Eigen::VectorXd& exposure, std::uint64_t seed);

HindcastResult hindcast(const ModelFit& fit, const MortalityDataset& data, const std::vector<int>& cells,
                        std::uint64_t seed);

/// Sample quantile with linear interpolation between order statistics.
double quantile(std::vector<double> values, double p);

inline constexpr const char* kRelativeRiskDisclaimer =
    "Cross-strata relative risks are identified only up to a multiplicative constant: the curve is "
    "normalized to 1 at the first index, so only its shape is interpretable, not its level.";

struct RelativeRiskCurve {
  Block block;  // period or cohort
  int stratum1;
  int stratum2;
  Eigen::VectorXd median;  // normalized, first entry exactly 1
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  std::string disclaimer = kRelativeRiskDisclaimer;
};

/// exp of the difference of (level + block effect) between two effect sets;
/// divided by its first entry when `normalize` is set.
Eigen::VectorXd relative_risk_curve(const ApcEffects& first, const ApcEffects& second, Block block,
                                    bool normalize = true);

/// True when the pattern shares the age curvature and the baseline while
/// letting `block` vary, so that the contrast is defined.
bool relative_risk_licensed(const SharingPattern& pattern, Block block);

/// Posterior median and 95% band of the normalized relative-risk curve of
/// stratum r1 against r2. Throws std::invalid_argument when the pattern does
/// not license the contrast.
RelativeRiskCurve cross_strata_rr(const ModelFit& fit, Block block, int r1, int r2);

}  // namespace sapc
