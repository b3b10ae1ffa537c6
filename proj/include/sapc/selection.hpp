// WAIC scoring and orchestration of the sharing-pattern x structure grid.
#pragma once

#include "sapc/inference.hpp"

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace sapc {

struct WaicResult {
  double waic = 0.0;
  double lppd = 0.0;
  double p_waic = 0.0;
  /// Cells whose log likelihood was -inf in every sample.
  std::vector<int> flagged;
};

/// `loglik` is n_samples x n_cells. lppd uses log-sum-exp; p_waic is the
/// sum of per-cell sample variances (n - 1 denominator).
WaicResult waic(const Eigen::MatrixXd& loglik);

/// Pointwise log likelihood of the observed cells for every posterior
/// log-rate sample (n_samples x n_observed).
Eigen::MatrixXd pointwise_loglik(const Eigen::MatrixXd& log_rate_samples, const MortalityDataset& data);

struct FitOptions {
  OptimizeOptions optimize;
  int posterior_samples = 1000;
  std::uint64_t seed = 1;
  /// Integrate over an axial hyperparameter design instead of plugging in.
  bool axial_integration = false;
};

struct ModelFit {
  LatentModel model;
  HyperFit hyper;
  PosteriorFit posterior;
  WaicResult score;
};

ModelFit fit_model(const LatentModel& model, const MortalityDataset& data, const FitOptions& options);

struct GridEntry {
  SharingPattern pattern;
  StructureKind structure;
  std::optional<WaicResult> score;
  std::string error;
  std::shared_ptr<const ModelFit> fit;

  std::string name() const;
};

struct ModelGridResult {
  std::vector<GridEntry> entries;
  /// Indices into `entries` of successful fits, by ascending WAIC.
  std::vector<int> ranking;

  const GridEntry* find(const std::string& name) const;
};

struct GridConfig {
  std::vector<SharingPattern> patterns;
  std::vector<StructureKind> structures{StructureKind::independent, StructureKind::exchangeable, StructureKind::bym2};
  const AdjacencyGraph* graph = nullptr;
  BaselineSpec baseline;
  PriorConfig priors;
  FitOptions fit;
  int workers = 1;
  bool keep_fits = true;
};

/// The (pattern, structure) pairs to fit: M1 only under the independent
/// structure; BYM2 only when a graph is supplied; only M1 when R == 1.
std::vector<std::pair<SharingPattern, StructureKind>> grid_members(const GridConfig& config, int strata);

/// Fits every grid member. Per-entry failures are recorded, never thrown.
/// Each entry draws from its own seed stream, so results do not depend on
/// the worker count or fit order.
ModelGridResult fit_grid(const MortalityDataset& data, const GridConfig& config);

}  // namespace sapc
