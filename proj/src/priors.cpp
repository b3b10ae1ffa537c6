#include "sapc/priors.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace sapc {

namespace {

double normal_logpdf(double x, double mean, double variance) {
  const double z = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * variance) + z * z / variance);
}

// x - log(1 + x) without cancellation near zero.
double x_minus_log1p(double x) {
  if (std::abs(x) < 1e-4) return x * x * (0.5 - x * (1.0 / 3.0 - 0.25 * x));
  return x - std::log1p(x);
}

}  // namespace

std::string to_string(Block b) {
  switch (b) {
    case Block::baseline: return "baseline";
    case Block::age: return "age";
    case Block::period: return "period";
    case Block::cohort: return "cohort";
  }
  return "?";
}

double elicit_precision_rate(const PrecisionElicitation& e) {
  if (!(e.epsilon > 0.0)) throw std::domain_error("elicit_precision_rate: epsilon must be positive");
  if (!(e.q > 0.0 && e.q < 1.0)) throw std::domain_error("elicit_precision_rate: q must lie in (0, 1)");
  const boost::math::students_t t2(2.0);
  const double t = boost::math::quantile(t2, 1.0 - e.q / 2.0);
  const double ratio = e.epsilon / t;
  return ratio * ratio / 2.0;
}

std::pair<double, double> BaselineMeanPrior::exp_interval(int component, double level) const {
  const double z = boost::math::quantile(boost::math::normal(), 0.5 + level / 2.0);
  const double sd = std::sqrt(variance(component));
  return {std::exp(mean(component) - z * sd), std::exp(mean(component) + z * sd)};
}

double BaselineMeanPrior::logpdf(const Eigen::Vector3d& nu0) const {
  double out = 0.0;
  for (int c = 0; c < 3; ++c) out += normal_logpdf(nu0(c), mean(c), variance(c));
  return out;
}

double exchangeable_to_real(double rho, int strata) {
  return std::log((1.0 + rho * (strata - 1.0)) / (1.0 - rho));
}

double exchangeable_from_real(double zeta, int strata) {
  // Written to stay finite for large |zeta|.
  if (zeta > 0) {
    const double e = std::exp(-zeta);
    return (1.0 - e) / (1.0 + (strata - 1.0) * e);
  }
  const double e = std::exp(zeta);
  return (e - 1.0) / (e + strata - 1.0);
}

double exchangeable_rho_logpdf(double rho, int strata, double variance) {
  const auto [lo, hi] = rho_domain(StructureKind::exchangeable, strata);
  if (!(rho > lo && rho < hi)) throw std::domain_error("exchangeable rho outside (-1/(R-1), 1)");
  const double zeta = exchangeable_to_real(rho, strata);
  const double jac = (strata - 1.0) / (1.0 + rho * (strata - 1.0)) + 1.0 / (1.0 - rho);
  return normal_logpdf(zeta, 0.0, variance) + std::log(jac);
}

PcPriorBym2::PcPriorBym2(const ScaledIcar& icar, double u, double alpha)
    : eigen_minus_one_(icar.eigenvalues().array() - 1.0) {
  if (!(u > 0.0 && u < 1.0) || !(alpha > 0.0 && alpha < 1.0))
    throw std::domain_error("PcPriorBym2: calibration point and probability must lie in (0, 1)");
  // Q*^- has a zero eigenvalue, so the distance diverges as rho -> 1 and the
  // exponential prior on the distance needs no truncation:
  // Pr(rho < u) = 1 - exp(-lambda d(u)).
  lambda_ = -std::log1p(-alpha) / distance(u);
}

double PcPriorBym2::kld(double rho, double omr) const {
  double out = 0.0;
  for (Eigen::Index i = 0; i < eigen_minus_one_.size(); ++i) {
    const double g = eigen_minus_one_(i);
    const double x = rho * g;
    // 1 + x is written as omr + rho (1 + g) so it stays accurate near the null eigenvalue
    out += x < -0.5 ? x - std::log(omr + rho * (1.0 + g)) : x_minus_log1p(x);
  }
  return 0.5 * out;
}

double PcPriorBym2::kld_derivative(double rho, double omr) const {
  double out = 0.0;
  for (Eigen::Index i = 0; i < eigen_minus_one_.size(); ++i) {
    const double g = eigen_minus_one_(i);
    const double x = rho * g;
    out += g * x / (omr + rho * (1.0 + g));
  }
  return 0.5 * out;
}

double PcPriorBym2::distance(double rho) const {
  if (!(rho >= 0.0 && rho < 1.0)) throw std::domain_error("PcPriorBym2: rho must lie in [0, 1)");
  return std::sqrt(2.0 * kld(rho, 1.0 - rho));
}

double PcPriorBym2::distance_derivative(double rho) const {
  if (!(rho > 0.0 && rho < 1.0)) throw std::domain_error("PcPriorBym2: rho must lie in (0, 1)");
  return derivative_at(rho, 1.0 - rho);
}

double PcPriorBym2::derivative_at(double rho, double omr) const {
  if (rho < 1e-6) {
    // d(rho) ~ rho * sqrt(sum g^2 / 2) near the base model.
    return std::sqrt(0.5 * eigen_minus_one_.squaredNorm());
  }
  return kld_derivative(rho, omr) / std::sqrt(2.0 * kld(rho, omr));
}

double PcPriorBym2::log_density(double rho) const {
  if (!(rho > 0.0 && rho < 1.0)) throw std::domain_error("pc_prior_bym2: rho must lie strictly inside (0, 1)");
  return std::log(lambda_) - lambda_ * distance(rho) + std::log(distance_derivative(rho));
}

double PcPriorBym2::log_density_logit(double theta) const {
  if (!std::isfinite(theta)) throw std::domain_error("pc_prior_bym2: logit(rho) must be finite");
  // rho, 1 - rho and their logs, all without cancellation or overflow
  const double e = std::exp(-std::abs(theta));
  const double rho = theta >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
  const double log_rho = theta >= 0.0 ? -std::log1p(e) : -std::abs(theta) - std::log1p(e);
  const double log_omr = theta >= 0.0 ? -theta - std::log1p(e) : -std::log1p(e);
  if (rho < 1e-6) {
    const double slope = std::sqrt(0.5 * eigen_minus_one_.squaredNorm());
    return std::log(lambda_) - lambda_ * distance(rho) + std::log(slope) + log_rho + log_omr;
  }
  // 2 KLD and (1 - rho) d KLD / d rho, summed over eigenvalues lambda = 1 + g;
  // log(1 + rho g) = log((1 - rho) + rho lambda) stays finite as rho -> 1
  double kld2 = 0.0, scaled_slope = 0.0;
  for (Eigen::Index i = 0; i < eigen_minus_one_.size(); ++i) {
    const double g = eigen_minus_one_(i);
    const double x = rho * g;
    double log1x;
    if (x > -0.5) {
      log1x = std::log1p(x);
      kld2 += x_minus_log1p(x);
    } else {
      const double lam = 1.0 + g;
      log1x = lam > 0.0 ? std::max(log_omr, log_rho + std::log(lam)) +
                              std::log1p(std::exp(-std::abs(log_omr - log_rho - std::log(lam))))
                        : log_omr;
      kld2 += x - log1x;
    }
    scaled_slope += g * x * std::exp(log_omr - log1x);
  }
  const double d = std::sqrt(kld2);
  // d'(rho) = KLD'(rho) / d, and the logit Jacobian is rho (1 - rho)
  return std::log(lambda_) - lambda_ * d + std::log(0.5 * scaled_slope) - std::log(d) + log_rho;
}

double PcPriorBym2::cdf(double rho) const {
  if (rho <= 0.0) return 0.0;
  if (rho >= 1.0) return 1.0;
  return -std::expm1(-lambda_ * distance(rho));
}

double PcPriorBym2::quantile(double p) const {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("PcPriorBym2::quantile: p must lie in (0, 1)");
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double pc_prior_bym2(double rho, const PcPriorBym2& prior) { return prior.log_density(rho); }

double pc_prior_bym2(double rho, const ScaledIcar& icar) { return PcPriorBym2(icar).log_density(rho); }

double HyperParameters::tau_of(Block b) const {
  if (!tau[index(b)]) throw std::domain_error("missing precision for block " + to_string(b));
  return *tau[index(b)];
}

double HyperParameters::rho_of(Block b) const {
  if (!rho[index(b)]) throw std::domain_error("missing correlation for block " + to_string(b));
  return *rho[index(b)];
}

double hyperprior_logpdf(const HyperParameters& eta, const HyperpriorLayout& layout, const PriorConfig& config) {
  double out = 0.0;
  for (Block b : kBlocks) {
    const int k = index(b);
    if (layout.has_tau[k]) {
      const double tau = eta.tau_of(b);
      if (!(tau > 0.0)) throw std::domain_error("precision must be positive");
      const double rate = config.rate(b);
      out += std::log(rate) - rate * tau;
    }
    switch (layout.rho_kind[k]) {
      case StructureKind::independent: break;
      case StructureKind::exchangeable:
        out += exchangeable_rho_logpdf(eta.rho_of(b), layout.strata, config.exchangeable_variance);
        break;
      case StructureKind::bym2:
        if (!layout.pc) throw std::invalid_argument("hyperprior_logpdf: BYM2 needs a PC prior");
        out += layout.pc->log_density(eta.rho_of(b));
        break;
    }
  }
  if (layout.has_nu0) {
    if (!eta.nu0) throw std::domain_error("missing baseline mean");
    out += config.baseline_mean.logpdf(*eta.nu0);
  }
  return out;
}

HyperParameters sample_hyperparameters(const HyperpriorLayout& layout, const PriorConfig& config, std::mt19937_64& rng) {
  HyperParameters eta;
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  for (Block b : kBlocks) {
    const int k = index(b);
    if (layout.has_tau[k]) eta.tau[k] = std::exponential_distribution<double>(config.rate(b))(rng);
    switch (layout.rho_kind[k]) {
      case StructureKind::independent: break;
      case StructureKind::exchangeable: {
        const double zeta = std::sqrt(config.exchangeable_variance) * normal(rng);
        eta.rho[k] = exchangeable_from_real(zeta, layout.strata);
        break;
      }
      case StructureKind::bym2: {
        double u = unif(rng);
        while (u <= 0.0) u = unif(rng);
        eta.rho[k] = layout.pc->quantile(u);
        break;
      }
    }
  }
  if (layout.has_nu0) {
    Eigen::Vector3d nu;
    for (int c = 0; c < 3; ++c)
      nu(c) = config.baseline_mean.mean(c) + std::sqrt(config.baseline_mean.variance(c)) * normal(rng);
    eta.nu0 = nu;
  }
  return eta;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  // splitmix64 finalizer over the combined key
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace sapc
