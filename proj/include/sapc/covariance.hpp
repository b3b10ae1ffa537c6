// Matrix-normal densities and cross-strata correlation structures
// (independent, exchangeable, BYM2 with a variance-scaled ICAR component).
#pragma once

#include <Eigen/Dense>

#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace sapc {

/// Undirected graph over strata 0..R-1. Edges are stored once, as (lo, hi).
class AdjacencyGraph {
 public:
  struct Edge {
    int from;
    int to;
    bool augmented = false;
  };

  explicit AdjacencyGraph(int strata, std::vector<Edge> edges = {});

  int strata() const { return strata_; }
  const std::vector<Edge>& edges() const { return edges_; }
  Eigen::MatrixXd adjacency() const;
  /// Connected components as sorted member lists, ordered by smallest member.
  std::vector<std::vector<int>> components() const;
  int component_count() const { return static_cast<int>(components().size()); }
  /// Copy without the edges tagged as augmented.
  AdjacencyGraph without_augmented() const;

 private:
  int strata_;
  std::vector<Edge> edges_;
};

enum class StructureKind { independent, exchangeable, bym2 };

std::string to_string(StructureKind kind);
StructureKind structure_from_string(const std::string& name);

/// Q = D - W.
Eigen::MatrixXd icar_precision(const AdjacencyGraph& graph);

/// Moore-Penrose inverse of an ICAR precision, divided by the geometric mean
/// of its diagonal. Rejects graphs with more than one connected component.
Eigen::MatrixXd scaled_generalized_inverse(const Eigen::MatrixXd& q);

/// Scaled ICAR covariance with its eigendecomposition, computed once per
/// graph and shared read-only by every BYM2 evaluation.
class ScaledIcar {
 public:
  explicit ScaledIcar(const AdjacencyGraph& graph);

  int strata() const { return static_cast<int>(qinv_.rows()); }
  const Eigen::MatrixXd& qinv() const { return qinv_; }
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
  const Eigen::MatrixXd& eigenvectors() const { return eigenvectors_; }

 private:
  Eigen::MatrixXd qinv_;
  Eigen::VectorXd eigenvalues_;
  Eigen::MatrixXd eigenvectors_;
};

Eigen::MatrixXd exchangeable_corr(int strata, double rho);

/// (1 - rho) I + rho Q*^-, rho in (0, 1).
Eigen::MatrixXd bym2_corr(double rho, const Eigen::MatrixXd& scaled_qinv);

/// Valid open interval for rho under each structure.
std::pair<double, double> rho_domain(StructureKind kind, int strata);

class CrossStrataStructure {
 public:
  static CrossStrataStructure independent(int strata);
  static CrossStrataStructure exchangeable(int strata, double rho);
  static CrossStrataStructure bym2(std::shared_ptr<const ScaledIcar> icar, double rho);

  StructureKind kind() const { return kind_; }
  int strata() const { return strata_; }
  double rho() const { return rho_; }
  Eigen::MatrixXd correlation() const;

 private:
  CrossStrataStructure(StructureKind kind, int strata, double rho, std::shared_ptr<const ScaledIcar> icar);

  StructureKind kind_;
  int strata_;
  double rho_;
  std::shared_ptr<const ScaledIcar> icar_;
};

struct MatrixNormalParams {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd row_cov;
  Eigen::MatrixXd col_cov;
};

/// Log density of X ~ MN(mean, row_cov, col_cov), i.e. vec(X) is normal with
/// covariance col_cov (x) row_cov. Uses the trace form; the Kronecker product
/// is never formed. Throws std::domain_error for non-PD covariances.
double matrix_normal_logpdf(const Eigen::MatrixXd& x, const MatrixNormalParams& params);

/// Precision of vec(Xi) for an n x R block Xi ~ MN(0, tau^-1 I_n, Sigma_s),
/// with vec stacking strata-major (column by column). The precision is
/// Sigma_s^-1 (x) tau I_n.
class KroneckerPrecision {
 public:
  KroneckerPrecision(int block_rows, const Eigen::MatrixXd& cross_corr, double tau);

  int block_rows() const { return rows_; }
  int strata() const { return static_cast<int>(corr_inv_.rows()); }
  int size() const { return rows_ * strata(); }
  double tau() const { return tau_; }
  const Eigen::MatrixXd& cross_precision() const { return corr_inv_; }

  double quad_form(const Eigen::VectorXd& v) const;
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const;
  double log_det() const;
  /// Materialized precision; only for small blocks and tests.
  Eigen::MatrixXd dense() const;
  /// Adds the precision into `target` at rows/cols offset..offset+size().
  void add_to(Eigen::MatrixXd& target, int offset) const;
  /// Draws one vector from N(0, precision^-1) given standard normals z.
  Eigen::VectorXd sample(const Eigen::VectorXd& z) const;

 private:
  int rows_;
  double tau_;
  Eigen::MatrixXd corr_inv_;
  Eigen::MatrixXd corr_chol_;  // lower Cholesky factor of Sigma_s
  double corr_inv_log_det_;
};

KroneckerPrecision block_prior_precision(int block_rows, const CrossStrataStructure& structure, double tau);

}  // namespace sapc
