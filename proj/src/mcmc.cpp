#include "sapc/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace sapc {

namespace {

struct ChainState {
  Eigen::VectorXd xi;
  Eigen::VectorXd theta;
  double loglik = 0.0;
  double log_prior = 0.0;  // latent prior at (xi, theta)
  double log_hyper = 0.0;  // hyperprior + Jacobian at theta
};

double hyper_log_target(const LatentModel& model, const Eigen::VectorXd& theta) {
  return model.hyperprior_logpdf(model.from_unconstrained(theta)) + model.log_jacobian(theta);
}

// Gaussian approximation of xi | theta at the conditional mode, H = U'U.
struct Conditional {
  Eigen::VectorXd mode;
  Eigen::MatrixXd upper;
  double half_log_det = 0.0;  // sum log diag(U)

  Conditional(const ModeResult& m) : mode(m.xi), upper(m.factor.matrixU()) {
    half_log_det = upper.diagonal().array().log().sum();
  }
  double log_density(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd r = upper.triangularView<Eigen::Upper>() * (x - mode);
    return half_log_det - 0.5 * r.squaredNorm() - 0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi);
  }
  Eigen::VectorXd draw(const Eigen::VectorXd& z) const { return mode + upper.triangularView<Eigen::Upper>().solve(z); }
};

// Robbins-Monro step on a log proposal scale.
void adapt(double& log_scale, double accept_rate, double target, int round) {
  log_scale += (accept_rate - target) / std::sqrt(1.0 + round);
}

}  // namespace

McmcResult mcmc_oracle(const LatentModel& model, const MortalityDataset& data, const HyperParameters& init,
                       const McmcOptions& options, LikelihoodKind likelihood) {
  if (options.iterations <= options.burn_in || options.thin < 1)
    throw std::invalid_argument("mcmc_oracle: need iterations > burn_in and thin >= 1");
  std::mt19937_64 rng(derive_seed(options.seed, 1));
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;

  ModeOptions mode_opts;
  mode_opts.likelihood = likelihood;
  const int d = model.free_dim();
  const int h = model.hyper_dim();

  ChainState cur;
  cur.theta = model.to_unconstrained(init);
  Conditional cond(conditional_mode(model, init, data, std::nullopt, mode_opts));
  cur.xi = cond.mode;
  cur.loglik = poisson_loglik(cur.xi, model, data, likelihood).value;
  cur.log_prior = model.prior(init).log_density(cur.xi);
  cur.log_hyper = hyper_log_target(model, cur.theta);

  double log_s_latent = std::log(2.38 / std::sqrt(static_cast<double>(d)));
  double log_s_hyper = std::log(2.38 / std::sqrt(static_cast<double>(std::max(h, 1)))) - 1.0;
  Eigen::MatrixXd hyper_chol = Eigen::MatrixXd::Identity(h, h);

  const int kept = (options.iterations - options.burn_in) / options.thin;
  McmcResult out;
  out.latent.resize(kept, d);
  out.theta.resize(kept, h);
  std::vector<Eigen::VectorXd> burn_theta;

  int acc_l = 0, acc_h = 0, window_l = 0, window_h = 0, round = 0;
  long total_acc_l = 0, total_acc_h = 0, total_post = 0;
  const int adapt_every = 50;
  int row = 0;
  auto standard_normal = [&](int n) {
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z(i) = normal(rng);
    return z;
  };

  for (int it = 0; it < options.iterations; ++it) {
    // Latent block: random walk preconditioned by the Hessian at the current theta.
    {
      const Eigen::VectorXd prop =
          cur.xi + std::exp(log_s_latent) * cond.upper.triangularView<Eigen::Upper>().solve(standard_normal(d));
      const LoglikResult ll = poisson_loglik(prop, model, data, likelihood);
      if (ll.finite) {
        const double lp = model.prior(model.from_unconstrained(cur.theta)).log_density(prop);
        const double log_ratio = ll.value + lp - cur.loglik - cur.log_prior;
        if (std::log(unif(rng)) < log_ratio) {
          cur.xi = prop;
          cur.loglik = ll.value;
          cur.log_prior = lp;
          ++acc_l;
          if (it >= options.burn_in) ++total_acc_l;
        }
      }
      ++window_l;
    }
    // Joint block: theta' by random walk, then xi' from the Gaussian
    // approximation at theta'; the reverse move is scored under the
    // approximation at the current theta.
    if (h > 0) {
      const Eigen::VectorXd prop = cur.theta + std::exp(log_s_hyper) * hyper_chol * standard_normal(h);
      try {
        const HyperParameters eta = model.from_unconstrained(prop);
        const double lh = hyper_log_target(model, prop);
        if (std::isfinite(lh)) {
          const Conditional next(conditional_mode(model, eta, data, cond.mode, mode_opts));
          const Eigen::VectorXd xi = next.draw(standard_normal(d));
          const LoglikResult ll = poisson_loglik(xi, model, data, likelihood);
          const double lp = model.prior(eta).log_density(xi);
          const double log_ratio = (ll.value + lp + lh) - (cur.loglik + cur.log_prior + cur.log_hyper) +
                                   cond.log_density(cur.xi) - next.log_density(xi);
          if (ll.finite && std::isfinite(log_ratio) && std::log(unif(rng)) < log_ratio) {
            cur.theta = prop;
            cur.xi = xi;
            cur.loglik = ll.value;
            cur.log_prior = lp;
            cur.log_hyper = lh;
            cond = next;
            ++acc_h;
            if (it >= options.burn_in) ++total_acc_h;
          }
        }
      } catch (const std::exception&) {
        // outside the domain, or no conditional mode: rejected
      }
      ++window_h;
    }

    if (it < options.burn_in) {
      burn_theta.push_back(cur.theta);
      if ((it + 1) % adapt_every == 0) {
        adapt(log_s_latent, static_cast<double>(acc_l) / window_l, 0.234, round);
        if (h > 0) adapt(log_s_hyper, static_cast<double>(acc_h) / window_h, 0.3, round);
        ++round;
        acc_l = acc_h = window_l = window_h = 0;
      }
      // Halfway through burn-in, switch the hyperparameter proposal to the
      // empirical covariance collected so far.
      if (h > 0 && it + 1 == options.burn_in / 2 && burn_theta.size() > static_cast<std::size_t>(4 * h)) {
        const std::size_t start = burn_theta.size() / 2;
        Eigen::MatrixXd m(burn_theta.size() - start, h);
        for (std::size_t i = start; i < burn_theta.size(); ++i) m.row(static_cast<Eigen::Index>(i - start)) = burn_theta[i];
        const Eigen::MatrixXd centered = m.rowwise() - m.colwise().mean();
        Eigen::MatrixXd cov = centered.transpose() * centered / std::max<Eigen::Index>(1, m.rows() - 1);
        cov.diagonal().array() += 1e-6;
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() == Eigen::Success) {
          hyper_chol = llt.matrixL();
          log_s_hyper = std::log(2.38 / std::sqrt(static_cast<double>(h)));
        }
      }
    } else {
      ++total_post;
      if ((it - options.burn_in) % options.thin == options.thin - 1 && row < kept) {
        out.latent.row(row) = cur.xi;
        out.theta.row(row) = cur.theta;
        ++row;
      }
    }
  }
  out.latent.conservativeResize(row, d);
  out.theta.conservativeResize(row, h);
  out.latent_acceptance = total_post ? static_cast<double>(total_acc_l) / total_post : 0.0;
  out.hyper_acceptance = total_post ? static_cast<double>(total_acc_h) / total_post : 0.0;

  double min_ess = std::numeric_limits<double>::infinity();
  for (int j = 0; j < d; ++j) min_ess = std::min(min_ess, effective_sample_size(out.latent.col(j)));
  for (int j = 0; j < h; ++j) min_ess = std::min(min_ess, effective_sample_size(out.theta.col(j)));
  out.min_ess = min_ess;
  out.poor_mixing = min_ess < options.ess_threshold;
  return out;
}

}  // namespace sapc
