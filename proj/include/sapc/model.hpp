// The stacked stratified latent Gaussian model: sharing patterns, the
// mortality dataset, design/prior assembly and the Poisson likelihood.
#pragma once

#include "sapc/apc.hpp"
#include "sapc/covariance.hpp"
#include "sapc/priors.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace sapc {

enum class Pattern { M1 = 1, M2, M3, M4, M5, M6 };

/// Which canonical blocks are constant across strata.
class SharingPattern {
 public:
  explicit SharingPattern(Pattern id) : id_(id) {}
  static SharingPattern parse(const std::string& name);
  static std::array<SharingPattern, 6> all();

  Pattern id() const { return id_; }
  bool shares(Block b) const;
  /// True when at least one block varies across strata.
  bool varies() const { return id_ != Pattern::M1; }
  std::string name() const;

  bool operator==(const SharingPattern&) const = default;

 private:
  Pattern id_;
};

/// Counts and exposures on an A x T x R grid, stored stratum-major with the
/// usual column-major-by-period cell order inside each stratum.
struct MortalityDataset {
  MortalityDataset(GridSpec grid, std::vector<std::string> strata);

  GridSpec grid;
  std::vector<std::string> strata;
  int first_age = 0;
  int first_year = 0;
  Eigen::VectorXd counts;
  Eigen::VectorXd exposure;  // 0 where unknown
  std::vector<std::uint8_t> observed;
  std::vector<std::uint8_t> partial;

  int strata_count() const { return static_cast<int>(strata.size()); }
  int size() const { return grid.cells() * strata_count(); }
  /// Stacked position of 1-based cell (i, j) in 0-based stratum r.
  int position(int r, int i, int j) const { return r * grid.cells() + grid.cell(i, j); }
  int observed_count() const;
  /// Throws std::invalid_argument on negative counts or observed cells
  /// without positive exposure.
  void validate() const;
};

enum class LikelihoodKind {
  poisson,
  /// Test harness only: counts hold observed log rates and exposure holds the
  /// observation precision.
  gaussian,
};

struct BlockLayout {
  Block block;
  int length;  // canonical rows in this block
  bool shared;
  int offset;  // first free-vector position
  int strata;  // 1 when shared
  int size() const { return length * strata; }
};

/// Gaussian prior of the free latent vector for one hyperparameter value.
class LatentPrior {
 public:
  struct Component {
    int offset;
    KroneckerPrecision precision;
    Eigen::VectorXd mean;
  };

  explicit LatentPrior(std::vector<Component> components, int dim);

  int dim() const { return dim_; }
  const std::vector<Component>& components() const { return components_; }
  Eigen::VectorXd mean() const;
  /// Normalized Gaussian log density.
  double log_density(const Eigen::VectorXd& xi) const;
  /// Gradient of the log density, -Q (xi - m).
  Eigen::VectorXd gradient(const Eigen::VectorXd& xi) const;
  double log_det() const;
  void add_precision(Eigen::MatrixXd& h) const;
  Eigen::VectorXd sample(std::mt19937_64& rng) const;

 private:
  std::vector<Component> components_;
  int dim_;
};

class LatentModel {
 public:
  LatentModel(GridSpec grid, int strata, SharingPattern pattern, StructureKind structure, BaselineSpec baseline,
              PriorConfig priors = {}, std::shared_ptr<const ScaledIcar> icar = nullptr);

  const GridSpec& grid() const { return grid_; }
  int strata() const { return strata_; }
  const SharingPattern& pattern() const { return pattern_; }
  StructureKind structure() const { return structure_; }
  const BaselineSpec& baseline() const { return baseline_; }
  const PriorConfig& priors() const { return priors_; }
  const Eigen::MatrixXd& design() const { return design_; }
  const std::vector<BlockLayout>& blocks() const { return blocks_; }
  const BlockLayout& block(Block b) const { return blocks_[index(b)]; }
  int free_dim() const { return free_dim_; }
  int cells() const { return grid_.cells() * strata_; }
  std::string name() const;

  /// Free-vector positions of stratum r's canonical parameters.
  const std::vector<int>& stratum_index(int r) const { return stratum_index_[r]; }
  Eigen::VectorXd stratum_canonical(const Eigen::VectorXd& xi, int r) const;
  /// Stacked log rates, length A*T*R.
  Eigen::VectorXd log_rates(const Eigen::VectorXd& xi) const;
  /// design' * v for a stacked per-cell vector v.
  Eigen::VectorXd design_transpose_times(const Eigen::VectorXd& v) const;
  /// Adds design' diag(w) design into h.
  void add_data_hessian(const Eigen::VectorXd& w, Eigen::MatrixXd& h) const;
  /// Dense stacked design (cells x free_dim); for tests and small models.
  Eigen::MatrixXd stacked_design() const;

  HyperpriorLayout hyper_layout() const;
  int hyper_dim() const { return static_cast<int>(hyper_names_.size()); }
  const std::vector<std::string>& hyper_names() const { return hyper_names_; }
  /// Unconstrained coordinates: log tau, transformed rho, raw nu0.
  Eigen::VectorXd to_unconstrained(const HyperParameters& eta) const;
  HyperParameters from_unconstrained(const Eigen::VectorXd& theta) const;
  /// log |d eta / d theta|.
  double log_jacobian(const Eigen::VectorXd& theta) const;
  double hyperprior_logpdf(const HyperParameters& eta) const;

  LatentPrior prior(const HyperParameters& eta) const;

 private:
  CrossStrataStructure cross_structure(double rho) const;

  GridSpec grid_;
  int strata_;
  SharingPattern pattern_;
  StructureKind structure_;
  BaselineSpec baseline_;
  PriorConfig priors_;
  std::shared_ptr<const ScaledIcar> icar_;
  std::shared_ptr<const PcPriorBym2> pc_;
  Eigen::MatrixXd design_;
  std::vector<BlockLayout> blocks_;
  int free_dim_ = 0;
  std::vector<std::vector<int>> stratum_index_;
  std::vector<std::string> hyper_names_;
};

/// Validating factory. BYM2 needs a connected graph; M1 and single-stratum
/// data admit only the independent structure.
LatentModel assemble_model(const GridSpec& grid, int strata, SharingPattern pattern, StructureKind structure,
                           const BaselineSpec& baseline, const PriorConfig& priors = {},
                           const AdjacencyGraph* graph = nullptr);

struct LoglikResult {
  double value = 0.0;
  Eigen::VectorXd gradient;  // with respect to the free latent vector
  Eigen::VectorXd weights;   // per stacked cell, zero where unobserved
  bool finite = true;
};

/// Per-cell log likelihood terms evaluated at stacked log rates mu.
LoglikResult cell_loglik(const Eigen::VectorXd& mu, const MortalityDataset& data,
                         LikelihoodKind kind = LikelihoodKind::poisson);

/// sum over observed cells of y (log N + mu) - N exp(mu) - log y!, with its
/// gradient and Fisher weights N exp(mu).
LoglikResult poisson_loglik(const Eigen::VectorXd& xi, const LatentModel& model, const MortalityDataset& data,
                            LikelihoodKind kind = LikelihoodKind::poisson);

/// Pointwise log likelihood of observed cells for one log-rate vector.
double poisson_logpmf(double y, double exposure, double mu);

}  // namespace sapc
