#include "sapc/inference.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>

namespace sapc {

namespace {

struct Evaluation {
  LoglikResult loglik;
  double log_prior = 0.0;
  double objective() const { return loglik.value + log_prior; }
  bool ok() const { return loglik.finite && std::isfinite(objective()); }
};

Evaluation evaluate(const LatentModel& model, const LatentPrior& prior, const MortalityDataset& data,
                    const Eigen::VectorXd& xi, LikelihoodKind kind) {
  Evaluation e;
  e.loglik = poisson_loglik(xi, model, data, kind);
  e.log_prior = prior.log_density(xi);
  return e;
}

Eigen::MatrixXd negative_hessian(const LatentModel& model, const LatentPrior& prior, const Eigen::VectorXd& weights) {
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(model.free_dim(), model.free_dim());
  prior.add_precision(h);
  model.add_data_hessian(weights, h);
  return h;
}

// Crude log rate from the observed baseline cells of the given strata.
std::optional<Eigen::Vector3d> crude_baseline(const LatentModel& model, const MortalityDataset& data,
                                              const std::vector<int>& strata, LikelihoodKind kind) {
  const auto cells = baseline_cells(model.grid(), model.baseline());
  Eigen::Vector3d points;
  for (int m = 0; m < 3; ++m) {
    double y = 0.0, n = 0.0;
    int seen = 0;
    for (int r : strata) {
      const int pos = data.position(r, cells[m].first, cells[m].second);
      if (!data.observed[pos]) continue;
      ++seen;
      if (kind == LikelihoodKind::poisson) {
        y += data.counts(pos);
        n += data.exposure(pos);
      } else {
        y += data.counts(pos);
        n += 1.0;
      }
    }
    if (seen == 0) return std::nullopt;
    points(m) = kind == LikelihoodKind::poisson ? std::log((y + 0.5) / n) : y / n;
  }
  if (model.baseline().form == BaselineForm::point_two_slopes)
    points = Eigen::Vector3d(points(0), points(1) - points(0), points(2) - points(0));
  return points;
}

}  // namespace

Eigen::VectorXd initial_latent(const LatentModel& model, const MortalityDataset& data, const HyperParameters& eta,
                               LikelihoodKind kind) {
  Eigen::VectorXd xi = Eigen::VectorXd::Zero(model.free_dim());
  const BlockLayout& bl = model.block(Block::baseline);
  std::vector<int> all(model.strata());
  for (int r = 0; r < model.strata(); ++r) all[r] = r;
  const Eigen::Vector3d fallback = eta.nu0 ? *eta.nu0 : model.priors().baseline_mean.mean;
  const auto pooled = crude_baseline(model, data, all, kind);
  if (bl.shared) {
    xi.segment<3>(bl.offset) = pooled.value_or(fallback);
  } else {
    for (int r = 0; r < model.strata(); ++r) {
      const auto own = crude_baseline(model, data, {r}, kind);
      xi.segment<3>(bl.offset + 3 * r) = own ? *own : pooled.value_or(fallback);
    }
  }
  return xi;
}

Eigen::VectorXd initial_latent(const LatentModel& model, const MortalityDataset& data, const HyperParameters& eta) {
  return initial_latent(model, data, eta, LikelihoodKind::poisson);
}

ModeResult conditional_mode(const LatentModel& model, const HyperParameters& eta, const MortalityDataset& data,
                            const std::optional<Eigen::VectorXd>& init, const ModeOptions& options) {
  const LatentPrior prior = model.prior(eta);
  Eigen::VectorXd xi = init ? *init : initial_latent(model, data, eta, options.likelihood);
  if (xi.size() != model.free_dim()) throw std::invalid_argument("conditional_mode: init has wrong length");

  Evaluation current = evaluate(model, prior, data, xi, options.likelihood);
  if (!current.ok()) {
    xi = initial_latent(model, data, eta, options.likelihood);
    current = evaluate(model, prior, data, xi, options.likelihood);
    if (!current.ok()) throw NumericalError("conditional_mode: non-finite objective at the starting point", xi);
  }

  ModeResult out;
  bool converged = false;
  int iter = 0;
  for (; iter < options.max_iter; ++iter) {
    const Eigen::VectorXd grad = current.loglik.gradient + prior.gradient(xi);
    if (grad.lpNorm<Eigen::Infinity>() < options.grad_tol) {
      converged = true;
      break;
    }
    const Eigen::MatrixXd h = negative_hessian(model, prior, current.loglik.weights);
    Eigen::LLT<Eigen::MatrixXd> llt(h);
    if (llt.info() != Eigen::Success) throw NumericalError("conditional_mode: Hessian is not positive definite", xi);
    const Eigen::VectorXd step = llt.solve(grad);

    double t = 1.0;
    bool accepted = false;
    Evaluation next;
    Eigen::VectorXd candidate;
    for (int halving = 0; halving <= options.max_halvings; ++halving, t *= 0.5) {
      candidate = xi + t * step;
      next = evaluate(model, prior, data, candidate, options.likelihood);
      if (next.ok() && next.objective() >= current.objective() - 1e-12 * std::abs(current.objective())) {
        accepted = true;
        break;
      }
    }
    if (!accepted) throw NumericalError("conditional_mode: step halving failed to improve the objective", xi);
    const double change = std::abs(next.objective() - current.objective());
    xi = candidate;
    current = next;
    if (change <= options.rel_tol * std::max(1.0, std::abs(current.objective()))) {
      const Eigen::VectorXd g2 = current.loglik.gradient + prior.gradient(xi);
      // A stalled objective with a large gradient is not convergence.
      if (g2.lpNorm<Eigen::Infinity>() < std::max(options.grad_tol, 1e-5)) {
        ++iter;
        converged = true;
        break;
      }
    }
  }
  if (!converged)
    throw NumericalError("conditional_mode: no convergence after " + std::to_string(options.max_iter) + " iterations",
                         xi);

  out.xi = xi;
  out.hessian = negative_hessian(model, prior, current.loglik.weights);
  out.factor.compute(out.hessian);
  if (out.factor.info() != Eigen::Success) throw NumericalError("conditional_mode: Hessian at the mode is not PD", xi);
  out.loglik = current.loglik.value;
  out.log_prior = current.log_prior;
  out.iterations = iter;
  return out;
}

LaplaceResult laplace_approximation(const LatentModel& model, const HyperParameters& eta, const MortalityDataset& data,
                                    const std::optional<Eigen::VectorXd>& init, const ModeOptions& options) {
  LaplaceResult out;
  out.mode = conditional_mode(model, eta, data, init, options);
  const double log_det_h = 2.0 * out.mode.factor.matrixLLT().diagonal().array().log().sum();
  out.log_marginal = out.mode.loglik + out.mode.log_prior - 0.5 * log_det_h +
                     0.5 * model.free_dim() * std::log(2.0 * std::numbers::pi) + model.hyperprior_logpdf(eta);
  return out;
}

double laplace_log_marginal(const LatentModel& model, const HyperParameters& eta, const MortalityDataset& data,
                            const ModeOptions& options) {
  return laplace_approximation(model, eta, data, std::nullopt, options).log_marginal;
}

HyperParameters initial_hyperparameters(const LatentModel& model, const MortalityDataset& data,
                                        const ModeOptions& options) {
  const HyperpriorLayout hl = model.hyper_layout();
  HyperParameters eta;
  for (Block b : kBlocks) {
    const int k = index(b);
    if (hl.has_tau[k]) eta.tau[k] = 1.0;
    if (hl.rho_kind[k] == StructureKind::exchangeable) eta.rho[k] = 0.1;
    if (hl.rho_kind[k] == StructureKind::bym2) eta.rho[k] = 0.5;
  }
  if (hl.has_nu0) eta.nu0 = model.priors().baseline_mean.mean;

  ModeResult mode;
  try {
    mode = conditional_mode(model, eta, data, std::nullopt, options);
  } catch (const NumericalError&) {
    return eta;
  }
  const BlockLayout& base = model.block(Block::baseline);
  if (hl.has_nu0) {
    Eigen::Vector3d nu = Eigen::Vector3d::Zero();
    for (int r = 0; r < base.strata; ++r) nu += mode.xi.segment<3>(base.offset + 3 * r);
    eta.nu0 = Eigen::Vector3d(nu / base.strata);
  }
  for (const auto& bl : model.blocks()) {
    const int k = index(bl.block);
    if (!hl.has_tau[k]) continue;
    Eigen::VectorXd seg = mode.xi.segment(bl.offset, bl.size());
    if (bl.block == Block::baseline)
      for (int r = 0; r < bl.strata; ++r) seg.segment<3>(3 * r) -= *eta.nu0;
    const double ms = seg.squaredNorm() / bl.size();
    eta.tau[k] = std::clamp(1.0 / std::max(ms, 1e-12), 1e-2, 1e6);
  }
  return eta;
}

namespace {

struct SimplexContext {
  const LatentModel* model = nullptr;
  const MortalityDataset* data = nullptr;
  const OptimizeOptions* options = nullptr;
  int evaluations = 0;
  double best = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_theta;
  Eigen::VectorXd warm;
  Eigen::VectorXd best_mode;
};

double simplex_objective(const gsl_vector* x, void* params) {
  auto* ctx = static_cast<SimplexContext*>(params);
  ++ctx->evaluations;
  Eigen::VectorXd theta(static_cast<Eigen::Index>(x->size));
  for (std::size_t i = 0; i < x->size; ++i) theta(static_cast<Eigen::Index>(i)) = gsl_vector_get(x, i);
  if (!theta.allFinite() || theta.cwiseAbs().maxCoeff() > 50.0) return 1e300;
  try {
    const HyperParameters eta = ctx->model->from_unconstrained(theta);
    const LaplaceResult lr =
        laplace_approximation(*ctx->model, eta, *ctx->data, std::optional<Eigen::VectorXd>(ctx->warm), ctx->options->mode);
    if (!std::isfinite(lr.log_marginal)) return 1e300;
    ctx->warm = lr.mode.xi;
    if (lr.log_marginal > ctx->best) {
      ctx->best = lr.log_marginal;
      ctx->best_theta = theta;
      ctx->best_mode = lr.mode.xi;
    }
    return -lr.log_marginal;
  } catch (const std::exception&) {
    return 1e300;
  }
}

}  // namespace

HyperFit optimize_hyperparameters(const LatentModel& model, const MortalityDataset& data, const HyperParameters& init,
                                  const OptimizeOptions& options) {
  const Eigen::VectorXd theta0 = model.to_unconstrained(init);
  const auto n = static_cast<std::size_t>(theta0.size());

  SimplexContext ctx;
  ctx.model = &model;
  ctx.data = &data;
  ctx.options = &options;
  const LaplaceResult start = laplace_approximation(model, init, data, std::nullopt, options.mode);
  ctx.warm = start.mode.xi;
  ctx.best = start.log_marginal;
  ctx.best_theta = theta0;
  ctx.best_mode = start.mode.xi;
  ctx.evaluations = 1;

  HyperFit fit;
  fit.initial_objective = start.log_marginal;

  gsl_set_error_handler_off();
  gsl_multimin_function fn{&simplex_objective, n, &ctx};
  std::unique_ptr<gsl_vector, decltype(&gsl_vector_free)> x(gsl_vector_alloc(n), &gsl_vector_free);
  std::unique_ptr<gsl_vector, decltype(&gsl_vector_free)> step(gsl_vector_alloc(n), &gsl_vector_free);
  for (std::size_t i = 0; i < n; ++i) {
    gsl_vector_set(x.get(), i, theta0(static_cast<Eigen::Index>(i)));
    gsl_vector_set(step.get(), i, options.initial_step);
  }
  const auto hl = model.hyper_layout();
  if (hl.has_nu0)
    for (std::size_t i = n - 3; i < n; ++i) gsl_vector_set(step.get(), i, 0.1);

  std::unique_ptr<gsl_multimin_fminimizer, decltype(&gsl_multimin_fminimizer_free)> solver(
      gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n), &gsl_multimin_fminimizer_free);
  gsl_multimin_fminimizer_set(solver.get(), &fn, x.get(), step.get());

  // Converged when the best value moved by less than `tol` (relative) over a
  // window of iterations while the simplex is small.
  const int window = 2 * static_cast<int>(n) + 2;
  std::vector<double> history;
  while (ctx.evaluations < options.max_evals) {
    if (gsl_multimin_fminimizer_iterate(solver.get()) != GSL_SUCCESS) break;
    history.push_back(ctx.best);
    const double size = gsl_multimin_fminimizer_size(solver.get());
    if (static_cast<int>(history.size()) > window) {
      const double old = history[history.size() - 1 - window];
      const double rel = std::abs(ctx.best - old) / std::max(1.0, std::abs(ctx.best));
      if (rel < options.tol && size < 1e-2) {
        fit.converged = true;
        break;
      }
    }
    if (size < 1e-5) {
      fit.converged = true;
      break;
    }
  }

  fit.theta = ctx.best_theta;
  fit.eta = model.from_unconstrained(fit.theta);
  fit.objective = ctx.best;
  fit.evaluations = ctx.evaluations;
  fit.latent_mode = ctx.best_mode;
  return fit;
}

Eigen::MatrixXd PosteriorFit::log_rate_samples(const LatentModel& model) const {
  const int n = model.grid().cells();
  Eigen::MatrixXd out(samples.rows(), model.cells());
  for (int r = 0; r < model.strata(); ++r)
    out.middleCols(r * n, n).noalias() = samples(Eigen::all, model.stratum_index(r)) * model.design().transpose();
  return out;
}

namespace {

Eigen::MatrixXd draw_gaussian(const ModeResult& mode, int n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  const int d = static_cast<int>(mode.xi.size());
  Eigen::MatrixXd z(d, n);
  for (int s = 0; s < n; ++s)
    for (int i = 0; i < d; ++i) z(i, s) = normal(rng);
  // H = L L', so L'^{-1} z has covariance H^{-1}.
  Eigen::MatrixXd x = mode.factor.matrixU().solve(z);
  x.colwise() += mode.xi;
  return x.transpose();
}

}  // namespace

PosteriorFit sample_posterior(const LatentModel& model, const HyperParameters& eta_hat, const MortalityDataset& data,
                              int n, std::uint64_t seed, const ModeOptions& options) {
  if (n < 1) throw std::invalid_argument("sample_posterior: need at least one sample");
  const LaplaceResult lr = laplace_approximation(model, eta_hat, data, std::nullopt, options);
  PosteriorFit fit;
  fit.eta_hat = eta_hat;
  fit.latent_mean = lr.mode.xi;
  fit.latent_precision = lr.mode.hessian;
  fit.log_marginal = lr.log_marginal;
  std::mt19937_64 rng(derive_seed(seed, 0));
  fit.samples = draw_gaussian(lr.mode, n, rng);
  return fit;
}

PosteriorFit sample_posterior_axial(const LatentModel& model, const HyperFit& hfit, const MortalityDataset& data,
                                    int n, std::uint64_t seed, double step, const ModeOptions& options) {
  const int h = static_cast<int>(hfit.theta.size());
  auto objective = [&](const Eigen::VectorXd& theta) {
    try {
      return laplace_approximation(model, model.from_unconstrained(theta), data, hfit.latent_mode, options).log_marginal;
    } catch (const std::exception&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  // Central-difference Hessian of the objective in the unconstrained scale.
  const double fd = 1e-2;
  const double f0 = hfit.objective;
  Eigen::MatrixXd hess(h, h);
  for (int i = 0; i < h; ++i) {
    Eigen::VectorXd ei = Eigen::VectorXd::Unit(h, i) * fd;
    hess(i, i) = (objective(hfit.theta + ei) - 2.0 * f0 + objective(hfit.theta - ei)) / (fd * fd);
    for (int j = 0; j < i; ++j) {
      Eigen::VectorXd ej = Eigen::VectorXd::Unit(h, j) * fd;
      hess(i, j) = hess(j, i) = (objective(hfit.theta + ei + ej) - objective(hfit.theta + ei - ej) -
                                 objective(hfit.theta - ei + ej) + objective(hfit.theta - ei - ej)) /
                                (4.0 * fd * fd);
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(-hess);
  Eigen::VectorXd lambda = eig.eigenvalues().cwiseMax(1e-6);

  std::vector<Eigen::VectorXd> points{hfit.theta};
  for (int k = 0; k < h; ++k)
    for (double sign : {-1.0, 1.0}) points.push_back(hfit.theta + sign * step * eig.eigenvectors().col(k) / std::sqrt(lambda(k)));

  std::vector<double> logw;
  std::vector<ModeResult> modes;
  for (const auto& p : points) {
    try {
      const auto lr = laplace_approximation(model, model.from_unconstrained(p), data, hfit.latent_mode, options);
      logw.push_back(lr.log_marginal);
      modes.push_back(lr.mode);
    } catch (const std::exception&) {
    }
  }
  if (modes.empty()) throw NumericalError("sample_posterior_axial: no design point could be fitted");
  const double top = *std::max_element(logw.begin(), logw.end());
  std::vector<double> w(logw.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(logw[i] - top);

  std::mt19937_64 rng(derive_seed(seed, 0));
  std::discrete_distribution<int> pick(w.begin(), w.end());
  std::vector<int> counts(modes.size(), 0);
  for (int s = 0; s < n; ++s) ++counts[pick(rng)];

  PosteriorFit fit;
  fit.eta_hat = hfit.eta;
  fit.log_marginal = hfit.objective;
  fit.samples.resize(n, model.free_dim());
  fit.latent_mean = Eigen::VectorXd::Zero(model.free_dim());
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  int row = 0;
  for (std::size_t m = 0; m < modes.size(); ++m) {
    fit.latent_mean += w[m] / wsum * modes[m].xi;
    if (counts[m] == 0) continue;
    fit.samples.middleRows(row, counts[m]) = draw_gaussian(modes[m], counts[m], rng);
    row += counts[m];
  }
  fit.latent_precision = modes.front().hessian;
  return fit;
}

double effective_sample_size(const Eigen::VectorXd& chain) {
  const Eigen::Index n = chain.size();
  if (n < 4) return static_cast<double>(n);
  const Eigen::VectorXd x = chain.array() - chain.mean();
  const double c0 = x.squaredNorm() / static_cast<double>(n);
  if (c0 <= 0.0) return static_cast<double>(n);
  auto autocov = [&](Eigen::Index lag) { return x.head(n - lag).dot(x.tail(n - lag)) / static_cast<double>(n); };
  double sum = 0.0;
  for (Eigen::Index k = 0; 2 * k + 1 < n; ++k) {
    const double pair = autocov(2 * k) + autocov(2 * k + 1);
    if (pair <= 0.0) break;
    sum += pair;
  }
  const double tau = std::max(1.0, (2.0 * sum - c0) / c0);
  return static_cast<double>(n) / tau;
}

}  // namespace sapc
