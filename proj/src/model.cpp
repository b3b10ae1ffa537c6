#include "sapc/model.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sapc {

namespace {

constexpr std::array<std::array<bool, 4>, 6> kSharing = {{
    {true, true, true, true},     // M1
    {true, true, true, false},    // M2
    {true, true, false, true},    // M3
    {true, true, false, false},   // M4
    {true, false, false, false},  // M5
    {false, false, false, false}, // M6
}};

double logit(double p) { return std::log(p / (1.0 - p)); }
double inv_logit(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

SharingPattern SharingPattern::parse(const std::string& name) {
  if (name.size() == 2 && (name[0] == 'M' || name[0] == 'm') && name[1] >= '1' && name[1] <= '6')
    return SharingPattern(static_cast<Pattern>(name[1] - '0'));
  throw std::invalid_argument("unknown sharing pattern '" + name + "' (expected M1..M6)");
}

std::array<SharingPattern, 6> SharingPattern::all() {
  return {SharingPattern(Pattern::M1), SharingPattern(Pattern::M2), SharingPattern(Pattern::M3),
          SharingPattern(Pattern::M4), SharingPattern(Pattern::M5), SharingPattern(Pattern::M6)};
}

bool SharingPattern::shares(Block b) const { return kSharing[static_cast<int>(id_) - 1][index(b)]; }

std::string SharingPattern::name() const { return "M" + std::to_string(static_cast<int>(id_)); }

MortalityDataset::MortalityDataset(GridSpec g, std::vector<std::string> s)
    : grid(g), strata(std::move(s)) {
  if (strata.empty()) throw std::invalid_argument("MortalityDataset: need at least one stratum");
  counts = Eigen::VectorXd::Zero(size());
  exposure = Eigen::VectorXd::Zero(size());
  observed.assign(size(), 0);
  partial.assign(size(), 0);
}

int MortalityDataset::observed_count() const {
  int n = 0;
  for (auto o : observed) n += o ? 1 : 0;
  return n;
}

void MortalityDataset::validate() const {
  if (counts.size() != size() || exposure.size() != size() || static_cast<int>(observed.size()) != size())
    throw std::invalid_argument("MortalityDataset: array sizes do not match the grid");
  for (int c = 0; c < size(); ++c) {
    if (!observed[c]) continue;
    if (counts(c) < 0 || !std::isfinite(counts(c))) throw std::invalid_argument("MortalityDataset: negative count");
    if (!(exposure(c) > 0.0)) throw std::invalid_argument("MortalityDataset: observed cell without positive exposure");
  }
}

LatentPrior::LatentPrior(std::vector<Component> components, int dim) : components_(std::move(components)), dim_(dim) {}

Eigen::VectorXd LatentPrior::mean() const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(dim_);
  for (const auto& c : components_) m.segment(c.offset, c.precision.size()) = c.mean;
  return m;
}

double LatentPrior::log_density(const Eigen::VectorXd& xi) const {
  double out = 0.0;
  for (const auto& c : components_) {
    const Eigen::VectorXd e = xi.segment(c.offset, c.precision.size()) - c.mean;
    out += -0.5 * c.precision.size() * std::log(2.0 * std::numbers::pi) + 0.5 * c.precision.log_det() -
           0.5 * c.precision.quad_form(e);
  }
  return out;
}

Eigen::VectorXd LatentPrior::gradient(const Eigen::VectorXd& xi) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(dim_);
  for (const auto& c : components_) {
    const Eigen::VectorXd e = xi.segment(c.offset, c.precision.size()) - c.mean;
    g.segment(c.offset, c.precision.size()) = -c.precision.apply(e);
  }
  return g;
}

double LatentPrior::log_det() const {
  double out = 0.0;
  for (const auto& c : components_) out += c.precision.log_det();
  return out;
}

void LatentPrior::add_precision(Eigen::MatrixXd& h) const {
  for (const auto& c : components_) c.precision.add_to(h, c.offset);
}

Eigen::VectorXd LatentPrior::sample(std::mt19937_64& rng) const {
  std::normal_distribution<double> normal;
  Eigen::VectorXd out(dim_);
  for (const auto& c : components_) {
    Eigen::VectorXd z(c.precision.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
    out.segment(c.offset, z.size()) = c.mean + c.precision.sample(z);
  }
  return out;
}

LatentModel::LatentModel(GridSpec grid, int strata, SharingPattern pattern, StructureKind structure,
                         BaselineSpec baseline, PriorConfig priors, std::shared_ptr<const ScaledIcar> icar)
    : grid_(grid),
      strata_(strata),
      pattern_(pattern),
      structure_(structure),
      baseline_(baseline),
      priors_(priors),
      icar_(std::move(icar)),
      design_(build_design_matrix(grid, baseline)) {
  if (strata < 1) throw std::invalid_argument("LatentModel: need at least one stratum");
  if (structure == StructureKind::bym2) {
    if (!icar_) throw std::invalid_argument("LatentModel: BYM2 needs an adjacency graph");
    if (icar_->strata() != strata) throw std::invalid_argument("LatentModel: graph size does not match strata");
    pc_ = std::make_shared<PcPriorBym2>(*icar_, priors_.bym2_u, priors_.bym2_alpha);
  }
  const std::array<int, 4> lengths = {3, grid.ages() - 2, grid.periods() - 2, grid.cohorts() - 2};
  int offset = 0;
  for (Block b : kBlocks) {
    const bool shared = strata == 1 || pattern.shares(b);
    BlockLayout layout{b, lengths[index(b)], shared, offset, shared ? 1 : strata};
    offset += layout.size();
    blocks_.push_back(layout);
  }
  free_dim_ = offset;

  stratum_index_.assign(strata, {});
  for (int r = 0; r < strata; ++r) {
    auto& idx = stratum_index_[r];
    idx.reserve(grid.canonical_size());
    for (const auto& bl : blocks_) {
      const int start = bl.offset + (bl.shared ? 0 : r * bl.length);
      for (int m = 0; m < bl.length; ++m) idx.push_back(start + m);
    }
  }

  const HyperpriorLayout hl = hyper_layout();
  for (Block b : kBlocks) {
    if (hl.has_tau[index(b)]) hyper_names_.push_back("log_tau_" + to_string(b));
    if (hl.rho_kind[index(b)] != StructureKind::independent) hyper_names_.push_back("rho_" + to_string(b) + "_real");
  }
  if (hl.has_nu0)
    for (int c = 1; c <= 3; ++c) hyper_names_.push_back("nu0_" + std::to_string(c));
}

std::string LatentModel::name() const { return pattern_.name() + "-" + to_string(structure_); }

Eigen::VectorXd LatentModel::stratum_canonical(const Eigen::VectorXd& xi, int r) const {
  return xi(stratum_index_.at(r));
}

Eigen::VectorXd LatentModel::log_rates(const Eigen::VectorXd& xi) const {
  if (xi.size() != free_dim_) throw std::invalid_argument("log_rates: latent vector has wrong length");
  const int n = grid_.cells();
  Eigen::VectorXd mu(n * strata_);
  for (int r = 0; r < strata_; ++r) mu.segment(r * n, n).noalias() = design_ * xi(stratum_index_[r]);
  return mu;
}

Eigen::VectorXd LatentModel::design_transpose_times(const Eigen::VectorXd& v) const {
  const int n = grid_.cells();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(free_dim_);
  for (int r = 0; r < strata_; ++r) out(stratum_index_[r]) += design_.transpose() * v.segment(r * n, n);
  return out;
}

void LatentModel::add_data_hessian(const Eigen::VectorXd& w, Eigen::MatrixXd& h) const {
  const int n = grid_.cells();
  const int p = grid_.canonical_size();
  Eigen::MatrixXd scaled(n, p);
  Eigen::MatrixXd block(p, p);
  for (int r = 0; r < strata_; ++r) {
    scaled = design_.array().colwise() * w.segment(r * n, n).array().sqrt();
    block.setZero();
    block.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose());
    block.triangularView<Eigen::StrictlyUpper>() = block.transpose();
    h(stratum_index_[r], stratum_index_[r]) += block;
  }
}

Eigen::MatrixXd LatentModel::stacked_design() const {
  const int n = grid_.cells();
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(n * strata_, free_dim_);
  for (int r = 0; r < strata_; ++r)
    for (int c = 0; c < grid_.canonical_size(); ++c) z.block(r * n, stratum_index_[r][c], n, 1) += design_.col(c);
  return z;
}

HyperpriorLayout LatentModel::hyper_layout() const {
  HyperpriorLayout hl;
  hl.strata = strata_;
  hl.pc = pc_;
  for (const auto& bl : blocks_) {
    const int k = index(bl.block);
    const bool is_baseline = bl.block == Block::baseline;
    // A shared baseline carries the informative mean prior directly.
    hl.has_tau[k] = !(is_baseline && bl.shared);
    if (!bl.shared) hl.rho_kind[k] = structure_;
    if (is_baseline && !bl.shared) hl.has_nu0 = true;
  }
  return hl;
}

Eigen::VectorXd LatentModel::to_unconstrained(const HyperParameters& eta) const {
  const HyperpriorLayout hl = hyper_layout();
  Eigen::VectorXd theta(hyper_dim());
  int pos = 0;
  for (Block b : kBlocks) {
    const int k = index(b);
    if (hl.has_tau[k]) theta(pos++) = std::log(eta.tau_of(b));
    switch (hl.rho_kind[k]) {
      case StructureKind::independent: break;
      case StructureKind::exchangeable: theta(pos++) = exchangeable_to_real(eta.rho_of(b), strata_); break;
      case StructureKind::bym2: theta(pos++) = logit(eta.rho_of(b)); break;
    }
  }
  if (hl.has_nu0) {
    if (!eta.nu0) throw std::domain_error("missing baseline mean");
    theta.segment<3>(pos) = *eta.nu0;
  }
  return theta;
}

HyperParameters LatentModel::from_unconstrained(const Eigen::VectorXd& theta) const {
  if (theta.size() != hyper_dim()) throw std::invalid_argument("from_unconstrained: wrong length");
  const HyperpriorLayout hl = hyper_layout();
  HyperParameters eta;
  int pos = 0;
  for (Block b : kBlocks) {
    const int k = index(b);
    if (hl.has_tau[k]) eta.tau[k] = std::exp(theta(pos++));
    switch (hl.rho_kind[k]) {
      case StructureKind::independent: break;
      case StructureKind::exchangeable: eta.rho[k] = exchangeable_from_real(theta(pos++), strata_); break;
      case StructureKind::bym2: eta.rho[k] = inv_logit(theta(pos++)); break;
    }
  }
  if (hl.has_nu0) eta.nu0 = Eigen::Vector3d(theta.segment<3>(pos));
  return eta;
}

double LatentModel::log_jacobian(const Eigen::VectorXd& theta) const {
  const HyperpriorLayout hl = hyper_layout();
  double out = 0.0;
  int pos = 0;
  for (Block b : kBlocks) {
    const int k = index(b);
    if (hl.has_tau[k]) out += theta(pos++);
    switch (hl.rho_kind[k]) {
      case StructureKind::independent: break;
      case StructureKind::exchangeable: {
        // d rho / d zeta = 1 / (d zeta / d rho)
        const double rho = exchangeable_from_real(theta(pos++), strata_);
        const double dz = (strata_ - 1.0) / (1.0 + rho * (strata_ - 1.0)) + 1.0 / (1.0 - rho);
        out -= std::log(dz);
        break;
      }
      case StructureKind::bym2: {
        const double x = theta(pos++);
        out += -std::abs(x) - 2.0 * std::log1p(std::exp(-std::abs(x)));
        break;
      }
    }
  }
  return out;
}

double LatentModel::hyperprior_logpdf(const HyperParameters& eta) const {
  return sapc::hyperprior_logpdf(eta, hyper_layout(), priors_);
}

CrossStrataStructure LatentModel::cross_structure(double rho) const {
  switch (structure_) {
    case StructureKind::independent: return CrossStrataStructure::independent(strata_);
    case StructureKind::exchangeable: return CrossStrataStructure::exchangeable(strata_, rho);
    case StructureKind::bym2: return CrossStrataStructure::bym2(icar_, rho);
  }
  throw std::logic_error("unreachable");
}

LatentPrior LatentModel::prior(const HyperParameters& eta) const {
  const HyperpriorLayout hl = hyper_layout();
  std::vector<LatentPrior::Component> comps;
  for (const auto& bl : blocks_) {
    const int k = index(bl.block);
    if (bl.block == Block::baseline && bl.shared) {
      // Three independent coordinates with the informative mean prior; a
      // 1-row Kronecker block whose "strata" are the coordinates.
      const Eigen::MatrixXd cov = priors_.baseline_mean.variance.asDiagonal();
      comps.push_back({bl.offset, KroneckerPrecision(1, cov, 1.0), priors_.baseline_mean.mean});
      continue;
    }
    const double tau = eta.tau_of(bl.block);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(bl.size());
    if (bl.block == Block::baseline) {
      if (!eta.nu0) throw std::domain_error("missing baseline mean");
      for (int r = 0; r < bl.strata; ++r) mean.segment(r * 3, 3) = *eta.nu0;
    }
    if (bl.shared) {
      comps.push_back({bl.offset, KroneckerPrecision(bl.length, Eigen::MatrixXd::Identity(1, 1), tau), mean});
    } else {
      const double rho = hl.rho_kind[k] == StructureKind::independent ? 0.0 : eta.rho_of(bl.block);
      comps.push_back({bl.offset, block_prior_precision(bl.length, cross_structure(rho), tau), mean});
    }
  }
  return LatentPrior(std::move(comps), free_dim_);
}

LatentModel assemble_model(const GridSpec& grid, int strata, SharingPattern pattern, StructureKind structure,
                           const BaselineSpec& baseline, const PriorConfig& priors, const AdjacencyGraph* graph) {
  if ((!pattern.varies() || strata == 1) && structure != StructureKind::independent)
    throw std::invalid_argument(pattern.name() + " has no strata-varying block and admits only the independent structure");
  if (strata == 1 && pattern.varies())
    throw std::invalid_argument("single-stratum data admit only M1");
  std::shared_ptr<const ScaledIcar> icar;
  if (structure == StructureKind::bym2) {
    if (!graph) throw std::invalid_argument("BYM2 requires an adjacency graph");
    if (graph->strata() != strata) throw std::invalid_argument("adjacency graph size does not match strata");
    if (graph->component_count() != 1)
      throw std::invalid_argument("BYM2 requires a connected adjacency graph (found " +
                                  std::to_string(graph->component_count()) + " components)");
    icar = std::make_shared<ScaledIcar>(*graph);
  }
  return LatentModel(grid, strata, pattern, structure, baseline, priors, std::move(icar));
}

double poisson_logpmf(double y, double exposure, double mu) {
  return y * (std::log(exposure) + mu) - exposure * std::exp(mu) - std::lgamma(y + 1.0);
}

LoglikResult cell_loglik(const Eigen::VectorXd& mu, const MortalityDataset& data, LikelihoodKind kind) {
  LoglikResult out;
  out.gradient = Eigen::VectorXd::Zero(mu.size());
  out.weights = Eigen::VectorXd::Zero(mu.size());
  for (Eigen::Index c = 0; c < mu.size(); ++c) {
    if (!data.observed[c]) continue;
    if (!std::isfinite(mu(c))) {
      out.finite = false;
      continue;
    }
    const double y = data.counts(c);
    const double n = data.exposure(c);
    if (kind == LikelihoodKind::poisson) {
      const double m = n * std::exp(mu(c));
      out.value += y * (std::log(n) + mu(c)) - m - std::lgamma(y + 1.0);
      out.gradient(c) = y - m;
      out.weights(c) = m;
    } else {
      const double e = y - mu(c);
      out.value += 0.5 * std::log(n / (2.0 * std::numbers::pi)) - 0.5 * n * e * e;
      out.gradient(c) = n * e;
      out.weights(c) = n;
    }
  }
  if (!std::isfinite(out.value)) out.finite = false;
  return out;
}

LoglikResult poisson_loglik(const Eigen::VectorXd& xi, const LatentModel& model, const MortalityDataset& data,
                            LikelihoodKind kind) {
  if (data.size() != model.cells() || data.grid != model.grid())
    throw std::invalid_argument("poisson_loglik: data dimensions do not match the model");
  LoglikResult out = cell_loglik(model.log_rates(xi), data, kind);
  out.gradient = model.design_transpose_times(out.gradient);
  return out;
}

}  // namespace sapc
