#include "sapc/covariance.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace sapc {

namespace {

constexpr double kEigenCutoff = 1e-10;

Eigen::LLT<Eigen::MatrixXd> checked_llt(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw std::domain_error(std::string(what) + " is not positive definite");
  return llt;
}

double llt_log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

AdjacencyGraph::AdjacencyGraph(int strata, std::vector<Edge> edges) : strata_(strata) {
  if (strata < 1) throw std::invalid_argument("AdjacencyGraph: need at least one stratum");
  for (auto e : edges) {
    if (e.from == e.to) throw std::invalid_argument("AdjacencyGraph: self-loop on stratum " + std::to_string(e.from));
    if (e.from < 0 || e.to < 0 || e.from >= strata || e.to >= strata)
      throw std::out_of_range("AdjacencyGraph: edge references an unknown stratum");
    if (e.from > e.to) std::swap(e.from, e.to);
    auto same = [&](const Edge& x) { return x.from == e.from && x.to == e.to; };
    auto it = std::find_if(edges_.begin(), edges_.end(), same);
    if (it == edges_.end()) {
      edges_.push_back(e);
    } else {
      it->augmented = it->augmented && e.augmented;
    }
  }
  std::sort(edges_.begin(), edges_.end(),
            [](const Edge& x, const Edge& y) { return std::pair(x.from, x.to) < std::pair(y.from, y.to); });
}

Eigen::MatrixXd AdjacencyGraph::adjacency() const {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(strata_, strata_);
  for (const auto& e : edges_) w(e.from, e.to) = w(e.to, e.from) = 1.0;
  return w;
}

std::vector<std::vector<int>> AdjacencyGraph::components() const {
  std::vector<int> parent(strata_);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& e : edges_) {
    const int a = find(e.from), b = find(e.to);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::vector<std::vector<int>> groups;
  std::vector<int> slot(strata_, -1);
  for (int s = 0; s < strata_; ++s) {
    const int root = find(s);
    if (slot[root] < 0) {
      slot[root] = static_cast<int>(groups.size());
      groups.emplace_back();
    }
    groups[slot[root]].push_back(s);
  }
  return groups;
}

AdjacencyGraph AdjacencyGraph::without_augmented() const {
  std::vector<Edge> kept;
  std::copy_if(edges_.begin(), edges_.end(), std::back_inserter(kept), [](const Edge& e) { return !e.augmented; });
  return AdjacencyGraph(strata_, kept);
}

std::string to_string(StructureKind kind) {
  switch (kind) {
    case StructureKind::independent: return "independent";
    case StructureKind::exchangeable: return "exchangeable";
    case StructureKind::bym2: return "bym2";
  }
  return "?";
}

StructureKind structure_from_string(const std::string& name) {
  if (name == "independent" || name == "iid") return StructureKind::independent;
  if (name == "exchangeable") return StructureKind::exchangeable;
  if (name == "bym2") return StructureKind::bym2;
  throw std::invalid_argument("unknown correlation structure '" + name + "'");
}

Eigen::MatrixXd icar_precision(const AdjacencyGraph& graph) {
  const Eigen::MatrixXd w = graph.adjacency();
  Eigen::MatrixXd q = -w;
  q.diagonal() = w.rowwise().sum();
  return q;
}

Eigen::MatrixXd scaled_generalized_inverse(const Eigen::MatrixXd& q) {
  if (q.rows() < 2 || q.rows() != q.cols()) throw std::invalid_argument("scaled_generalized_inverse: need a square matrix with R >= 2");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(q);
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  const double cutoff = kEigenCutoff * lambda.maxCoeff();
  int zeros = 0;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(lambda.size());
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) <= cutoff) {
      ++zeros;
    } else {
      inv(i) = 1.0 / lambda(i);
    }
  }
  if (zeros != 1)
    throw std::invalid_argument("scaled_generalized_inverse: graph must form a single connected component (found " +
                                std::to_string(zeros) + ")");
  const Eigen::MatrixXd& v = eig.eigenvectors();
  Eigen::MatrixXd qinv = v * inv.asDiagonal() * v.transpose();
  const double log_ref = qinv.diagonal().array().log().mean();
  return qinv / std::exp(log_ref);
}

ScaledIcar::ScaledIcar(const AdjacencyGraph& graph) : qinv_(scaled_generalized_inverse(icar_precision(graph))) {
  qinv_ = 0.5 * (qinv_ + qinv_.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(qinv_);
  eigenvalues_ = eig.eigenvalues();
  eigenvectors_ = eig.eigenvectors();
  const double cutoff = kEigenCutoff * eigenvalues_.maxCoeff();
  for (Eigen::Index i = 0; i < eigenvalues_.size(); ++i)
    if (eigenvalues_(i) <= cutoff) eigenvalues_(i) = 0.0;
}

std::pair<double, double> rho_domain(StructureKind kind, int strata) {
  switch (kind) {
    case StructureKind::exchangeable: return {-1.0 / (strata - 1.0), 1.0};
    case StructureKind::bym2: return {0.0, 1.0};
    case StructureKind::independent: break;
  }
  return {0.0, 0.0};
}

Eigen::MatrixXd exchangeable_corr(int strata, double rho) {
  if (strata < 2) throw std::invalid_argument("exchangeable_corr: need R >= 2");
  const auto [lo, hi] = rho_domain(StructureKind::exchangeable, strata);
  if (!(rho > lo && rho < hi))
    throw std::domain_error("exchangeable_corr: rho must lie strictly inside (-1/(R-1), 1)");
  Eigen::MatrixXd c = Eigen::MatrixXd::Constant(strata, strata, rho);
  c.diagonal().setOnes();
  return c;
}

Eigen::MatrixXd bym2_corr(double rho, const Eigen::MatrixXd& scaled_qinv) {
  if (!(rho > 0.0 && rho < 1.0)) throw std::domain_error("bym2_corr: rho must lie strictly inside (0, 1)");
  Eigen::MatrixXd c = rho * scaled_qinv;
  c.diagonal().array() += 1.0 - rho;
  return c;
}

CrossStrataStructure::CrossStrataStructure(StructureKind kind, int strata, double rho,
                                           std::shared_ptr<const ScaledIcar> icar)
    : kind_(kind), strata_(strata), rho_(rho), icar_(std::move(icar)) {}

CrossStrataStructure CrossStrataStructure::independent(int strata) {
  if (strata < 1) throw std::invalid_argument("CrossStrataStructure: need R >= 1");
  return {StructureKind::independent, strata, 0.0, nullptr};
}

CrossStrataStructure CrossStrataStructure::exchangeable(int strata, double rho) {
  exchangeable_corr(strata, rho);  // validates
  return {StructureKind::exchangeable, strata, rho, nullptr};
}

CrossStrataStructure CrossStrataStructure::bym2(std::shared_ptr<const ScaledIcar> icar, double rho) {
  if (!icar) throw std::invalid_argument("CrossStrataStructure: BYM2 needs an adjacency graph");
  if (!(rho > 0.0 && rho < 1.0)) throw std::domain_error("bym2: rho must lie strictly inside (0, 1)");
  const int r = icar->strata();
  return {StructureKind::bym2, r, rho, std::move(icar)};
}

Eigen::MatrixXd CrossStrataStructure::correlation() const {
  switch (kind_) {
    case StructureKind::independent: return Eigen::MatrixXd::Identity(strata_, strata_);
    case StructureKind::exchangeable: return exchangeable_corr(strata_, rho_);
    case StructureKind::bym2: return bym2_corr(rho_, icar_->qinv());
  }
  return {};
}

double matrix_normal_logpdf(const Eigen::MatrixXd& x, const MatrixNormalParams& p) {
  const Eigen::Index nr = x.rows(), nc = x.cols();
  if (p.mean.rows() != nr || p.mean.cols() != nc || p.row_cov.rows() != nr || p.row_cov.cols() != nr ||
      p.col_cov.rows() != nc || p.col_cov.cols() != nc)
    throw std::invalid_argument("matrix_normal_logpdf: dimension mismatch");
  const auto row = checked_llt(p.row_cov, "row covariance");
  const auto col = checked_llt(p.col_cov, "column covariance");
  const Eigen::MatrixXd e = x - p.mean;
  // tr[col^-1 E' row^-1 E] = || L_row^-1 E L_col^-T ||_F^2
  Eigen::MatrixXd a = row.matrixL().solve(e);
  Eigen::MatrixXd b = col.matrixL().solve(a.transpose());
  const double trace = b.squaredNorm();
  const double n = static_cast<double>(nr * nc);
  return -0.5 * (n * std::log(2.0 * std::numbers::pi) + static_cast<double>(nr) * llt_log_det(col) +
                 static_cast<double>(nc) * llt_log_det(row) + trace);
}

KroneckerPrecision::KroneckerPrecision(int block_rows, const Eigen::MatrixXd& cross_corr, double tau)
    : rows_(block_rows), tau_(tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::domain_error("KroneckerPrecision: tau must be positive");
  if (block_rows < 1) throw std::invalid_argument("KroneckerPrecision: empty block");
  const auto llt = checked_llt(cross_corr, "cross-strata correlation");
  corr_chol_ = llt.matrixL();
  corr_inv_ = llt.solve(Eigen::MatrixXd::Identity(cross_corr.rows(), cross_corr.cols()));
  corr_inv_ = 0.5 * (corr_inv_ + corr_inv_.transpose());
  corr_inv_log_det_ = -llt_log_det(llt);
}

double KroneckerPrecision::quad_form(const Eigen::VectorXd& v) const {
  const Eigen::Map<const Eigen::MatrixXd> m(v.data(), rows_, strata());
  return tau_ * (m.cwiseProduct(m * corr_inv_)).sum();
}

Eigen::VectorXd KroneckerPrecision::apply(const Eigen::VectorXd& v) const {
  const Eigen::Map<const Eigen::MatrixXd> m(v.data(), rows_, strata());
  Eigen::MatrixXd out = tau_ * (m * corr_inv_);
  return Eigen::Map<Eigen::VectorXd>(out.data(), out.size());
}

double KroneckerPrecision::log_det() const {
  return rows_ * corr_inv_log_det_ + static_cast<double>(size()) * std::log(tau_);
}

Eigen::MatrixXd KroneckerPrecision::dense() const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(size(), size());
  add_to(out, 0);
  return out;
}

void KroneckerPrecision::add_to(Eigen::MatrixXd& target, int offset) const {
  const int r = strata();
  for (int s = 0; s < r; ++s)
    for (int t = 0; t < r; ++t) {
      const double v = tau_ * corr_inv_(s, t);
      if (v == 0.0) continue;
      for (int i = 0; i < rows_; ++i) target(offset + s * rows_ + i, offset + t * rows_ + i) += v;
    }
}

Eigen::VectorXd KroneckerPrecision::sample(const Eigen::VectorXd& z) const {
  const Eigen::Map<const Eigen::MatrixXd> zm(z.data(), rows_, strata());
  Eigen::MatrixXd x = zm * corr_chol_.transpose() / std::sqrt(tau_);
  return Eigen::Map<Eigen::VectorXd>(x.data(), x.size());
}

KroneckerPrecision block_prior_precision(int block_rows, const CrossStrataStructure& structure, double tau) {
  return KroneckerPrecision(block_rows, structure.correlation(), tau);
}

}  // namespace sapc
