#include "doctest.h"

#include "sapc/inference.hpp"
#include "sapc/simulate.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace sapc;

namespace {

LatentModel make_model(int a, int t, int r, Pattern p, StructureKind s = StructureKind::independent) {
  const GridSpec g(a, t);
  return assemble_model(g, r, SharingPattern(p), s, default_baseline(g));
}

HyperParameters flat_hyperparameters(const LatentModel& model, double tau) {
  const HyperpriorLayout hl = model.hyper_layout();
  HyperParameters eta;
  for (Block b : kBlocks) {
    if (hl.has_tau[index(b)]) eta.tau[index(b)] = tau;
    if (hl.rho_kind[index(b)] != StructureKind::independent) eta.rho[index(b)] = 0.3;
  }
  if (hl.has_nu0) eta.nu0 = model.priors().baseline_mean.mean;
  return eta;
}

// Poisson data from a known latent vector, large exposures by default.
SyntheticData synthetic(const LatentModel& model, std::uint64_t seed, double exposure = 1e5) {
  return simulate(model, default_simulation_hyperparameters(model), Eigen::VectorXd::Constant(1, exposure), seed);
}

double log_posterior(const LatentModel& model, const HyperParameters& eta, const MortalityDataset& data,
                     const Eigen::VectorXd& xi) {
  return poisson_loglik(xi, model, data).value + model.prior(eta).log_density(xi);
}

// Gaussian log density, dense and direct.
double mvn_logpdf(const Eigen::VectorXd& y, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const Eigen::VectorXd z = llt.matrixL().solve(y - mean);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * y.size() * std::log(2.0 * std::numbers::pi) - 0.5 * logdet - 0.5 * z.squaredNorm();
}

}  // namespace

TEST_CASE("free dimension by sharing pattern") {
  for (int a : {3, 7}) {
    for (int t : {4, 9}) {
      CHECK(make_model(a, t, 3, Pattern::M1).free_dim() == 2 * (a + t) - 4);
      CHECK(make_model(a, t, 1, Pattern::M1).free_dim() == 2 * (a + t) - 4);
    }
  }
  CHECK(make_model(17, 18, 25, Pattern::M6).free_dim() == 1650);
  CHECK(make_model(5, 5, 3, Pattern::M4).free_dim() == 36);
  CHECK_THROWS(make_model(5, 5, 1, Pattern::M2));
  CHECK_THROWS(make_model(5, 5, 3, Pattern::M1, StructureKind::exchangeable));
}

TEST_CASE("Poisson log pmf") {
  CHECK(poisson_logpmf(3, 10, std::log(0.2)) == doctest::Approx(3 * std::log(2.0) - 2.0 - std::log(6.0)).epsilon(1e-14));
  CHECK(poisson_logpmf(0, 50, std::log(0.01)) == doctest::Approx(-0.5).epsilon(1e-14));
  CHECK(poisson_logpmf(7, 1, 0.0) == doctest::Approx(7 * 0.0 - 1.0 - std::lgamma(8.0)).epsilon(1e-14));
}

TEST_CASE("log likelihood and its derivatives") {
  const LatentModel model = make_model(5, 6, 2, Pattern::M4, StructureKind::exchangeable);
  const SyntheticData sim = synthetic(model, 11, 2000.0);
  const HyperParameters eta = default_simulation_hyperparameters(model);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  Eigen::VectorXd xi = sim.xi;
  for (int i = 0; i < xi.size(); ++i) xi(i) += 0.05 * z(rng);

  const LoglikResult ll = poisson_loglik(xi, model, sim.data);
  double direct = 0.0;
  const Eigen::VectorXd mu = model.stacked_design() * xi;
  for (int c = 0; c < sim.data.size(); ++c) direct += poisson_logpmf(sim.data.counts(c), sim.data.exposure(c), mu(c));
  CHECK(ll.value == doctest::Approx(direct).epsilon(1e-12));

  // gradient of the log posterior by central differences
  const LatentPrior prior = model.prior(eta);
  const Eigen::VectorXd grad = ll.gradient + prior.gradient(xi);
  for (int i = 0; i < xi.size(); ++i) {
    const double h = 1e-5 * std::max(1.0, std::abs(xi(i)));
    Eigen::VectorXd up = xi, dn = xi;
    up(i) += h;
    dn(i) -= h;
    const double fd = (log_posterior(model, eta, sim.data, up) - log_posterior(model, eta, sim.data, dn)) / (2 * h);
    CHECK(grad(i) == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
  }

  // Hessian at the mode against differences of the analytic gradient
  const ModeResult mode = conditional_mode(model, eta, sim.data);
  auto full_grad = [&](const Eigen::VectorXd& x) {
    return Eigen::VectorXd(poisson_loglik(x, model, sim.data).gradient + prior.gradient(x));
  };
  CHECK(full_grad(mode.xi).norm() < 1e-6);
  double worst = 0.0;
  for (int i = 0; i < xi.size(); ++i) {
    const double h = 1e-6;
    Eigen::VectorXd up = mode.xi, dn = mode.xi;
    up(i) += h;
    dn(i) -= h;
    const Eigen::VectorXd col = -(full_grad(up) - full_grad(dn)) / (2 * h);
    worst = std::max(worst, (col - mode.hessian.col(i)).norm() / mode.hessian.col(i).norm());
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("unobserved cells contribute nothing") {
  const LatentModel model = make_model(4, 5, 2, Pattern::M3);
  SyntheticData sim = synthetic(model, 2);
  const double before = poisson_loglik(sim.xi, model, sim.data).value;
  MortalityDataset d = sim.data;
  const int c = d.position(1, 2, 3);
  const double own = poisson_logpmf(d.counts(c), d.exposure(c), sim.log_rates(c));
  mask_cells(d, {c});
  d.counts(c) = 1e9;
  d.exposure(c) = 0.0;
  const LoglikResult after = poisson_loglik(sim.xi, model, d);
  CHECK(after.value == doctest::Approx(before - own).epsilon(1e-12));
  CHECK(after.weights(c) == 0.0);

  // with nothing observed the mode is the prior mean
  for (int k = 0; k < d.size(); ++k) d.observed[k] = 0;
  const HyperParameters eta = default_simulation_hyperparameters(model);
  const ModeResult mode = conditional_mode(model, eta, d);
  CHECK((mode.xi - model.prior(eta).mean()).lpNorm<Eigen::Infinity>() < 1e-10);
  CHECK(mode.loglik == 0.0);
}

TEST_CASE("vague priors reproduce the Poisson GLM fit") {
  const LatentModel model = make_model(5, 6, 2, Pattern::M6);
  const SyntheticData sim = synthetic(model, 5, 5000.0);
  const HyperParameters eta = flat_hyperparameters(model, 1e-10);
  const ModeResult mode = conditional_mode(model, eta, sim.data);

  // plain IRLS with the dense design
  const Eigen::MatrixXd x = model.stacked_design();
  const Eigen::VectorXd y = sim.data.counts;
  const Eigen::VectorXd off = sim.data.exposure.array().log();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(x.cols());
  beta(0) = std::log(y.sum() / sim.data.exposure.sum());
  beta(3) = beta(0);
  for (int it = 0; it < 100; ++it) {
    const Eigen::VectorXd eta_lin = x * beta + off;
    const Eigen::VectorXd m = eta_lin.array().exp();
    const Eigen::VectorXd work = eta_lin - off + ((y - m).array() / m.array()).matrix();
    const Eigen::MatrixXd xtwx = x.transpose() * m.asDiagonal() * x;
    const Eigen::VectorXd next = xtwx.ldlt().solve(x.transpose() * m.asDiagonal() * work);
    const double step = (next - beta).norm();
    beta = next;
    if (step < 1e-13) break;
  }
  CHECK((mode.xi - beta).lpNorm<Eigen::Infinity>() < 1e-6);
  CHECK((model.log_rates(mode.xi) - x * beta).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("large counts recover the true log rates") {
  const LatentModel model = make_model(6, 6, 2, Pattern::M5);
  SyntheticData sim = synthetic(model, 8);
  MortalityDataset d = sim.data;
  d.exposure.setConstant(1e10);
  for (int c = 0; c < d.size(); ++c) d.counts(c) = std::round(1e10 * std::exp(sim.log_rates(c)));
  const ModeResult mode = conditional_mode(model, flat_hyperparameters(model, 1e-8), d);
  CHECK((model.log_rates(mode.xi) - sim.log_rates).lpNorm<Eigen::Infinity>() < 1e-3);
}

TEST_CASE("Laplace marginal is exact for a Gaussian likelihood") {
  const LatentModel model = make_model(4, 5, 2, Pattern::M4, StructureKind::exchangeable);
  const HyperParameters eta = default_simulation_hyperparameters(model, 0.4);
  const LatentPrior prior = model.prior(eta);

  MortalityDataset d(model.grid(), {"a", "b"});
  std::mt19937_64 rng(21);
  std::normal_distribution<double> z;
  const Eigen::VectorXd truth = prior.sample(rng);
  const Eigen::VectorXd mu = model.log_rates(truth);
  for (int c = 0; c < d.size(); ++c) {
    d.observed[c] = c % 7 != 3;
    d.exposure(c) = 4.0 + c % 5;  // observation precision
    d.counts(c) = mu(c) + z(rng) / std::sqrt(d.exposure(c));
  }

  ModeOptions opt;
  opt.likelihood = LikelihoodKind::gaussian;
  const double laplace = laplace_log_marginal(model, eta, d, opt);

  // y_obs ~ N(X m, X Q^-1 X' + W^-1)
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(model.free_dim(), model.free_dim());
  prior.add_precision(q);
  const Eigen::MatrixXd x = model.stacked_design();
  std::vector<int> rows;
  for (int c = 0; c < d.size(); ++c)
    if (d.observed[c]) rows.push_back(c);
  const int n = static_cast<int>(rows.size());
  Eigen::MatrixXd xo(n, x.cols());
  Eigen::VectorXd yo(n), noise(n);
  for (int k = 0; k < n; ++k) {
    xo.row(k) = x.row(rows[k]);
    yo(k) = d.counts(rows[k]);
    noise(k) = 1.0 / d.exposure(rows[k]);
  }
  Eigen::MatrixXd cov = xo * q.inverse() * xo.transpose();
  cov.diagonal() += noise;
  const double exact = mvn_logpdf(yo, xo * prior.mean(), cov) + model.hyperprior_logpdf(eta);
  CHECK(laplace == doctest::Approx(exact).epsilon(1e-8 / std::abs(exact)));
}

TEST_CASE("permuting strata leaves the exchangeable marginal unchanged") {
  const LatentModel model = make_model(5, 5, 3, Pattern::M6, StructureKind::exchangeable);
  const SyntheticData sim = synthetic(model, 13, 3000.0);
  MortalityDataset perm(model.grid(), {"c", "a", "b"});
  const int cells = model.grid().cells();
  const std::array<int, 3> from{2, 0, 1};
  for (int r = 0; r < 3; ++r) {
    perm.counts.segment(r * cells, cells) = sim.data.counts.segment(from[r] * cells, cells);
    perm.exposure.segment(r * cells, cells) = sim.data.exposure.segment(from[r] * cells, cells);
  }
  std::fill(perm.observed.begin(), perm.observed.end(), std::uint8_t{1});
  const HyperParameters eta = default_simulation_hyperparameters(model, 0.2);
  CHECK(laplace_log_marginal(model, eta, perm) ==
        doctest::Approx(laplace_log_marginal(model, eta, sim.data)).epsilon(1e-10));
}

TEST_CASE("hyperparameter search and posterior draws") {
  const LatentModel model = make_model(5, 6, 2, Pattern::M4, StructureKind::exchangeable);
  const SyntheticData sim = synthetic(model, 4, 2e4);
  const HyperParameters init = initial_hyperparameters(model, sim.data);
  const HyperFit fit = optimize_hyperparameters(model, sim.data, init);
  CHECK(fit.objective >= fit.initial_objective);
  CHECK(std::isfinite(fit.objective));
  CHECK(fit.objective == doctest::Approx(laplace_log_marginal(model, fit.eta, sim.data)).epsilon(1e-8));
  const auto back = model.to_unconstrained(model.from_unconstrained(fit.theta));
  CHECK((back - fit.theta).norm() < 1e-10);

  const int n = 20000;
  const PosteriorFit post = sample_posterior(model, fit.eta, sim.data, n, 9);
  REQUIRE(post.sample_count() == n);
  const Eigen::MatrixXd cov = post.latent_precision.inverse();
  const Eigen::VectorXd mean = post.samples.colwise().mean();
  for (int i = 0; i < model.free_dim(); ++i)
    CHECK(std::abs(mean(i) - post.latent_mean(i)) < 4.5 * std::sqrt(cov(i, i) / n));
  const Eigen::MatrixXd centred = post.samples.rowwise() - post.latent_mean.transpose();
  const Eigen::MatrixXd emp = centred.transpose() * centred / n;
  for (int i = 0; i < model.free_dim(); ++i) CHECK(emp(i, i) == doctest::Approx(cov(i, i)).epsilon(0.05));

  // same seed, same draws
  CHECK(sample_posterior(model, fit.eta, sim.data, 10, 9).samples == post.samples.topRows(10));
  const Eigen::MatrixXd rates = post.log_rate_samples(model);
  CHECK(rates.cols() == model.cells());
  CHECK((rates.row(5).transpose() - model.log_rates(post.samples.row(5).transpose())).norm() < 1e-10);
}

TEST_CASE("effective sample size") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  Eigen::VectorXd iid(4000), ar(4000);
  double prev = 0.0;
  for (int i = 0; i < 4000; ++i) {
    iid(i) = z(rng);
    prev = 0.9 * prev + z(rng);
    ar(i) = prev;
  }
  CHECK(effective_sample_size(iid) > 3000);
  // AR(1) with phi = 0.9 has tau = 19
  CHECK(effective_sample_size(ar) == doctest::Approx(4000.0 / 19.0).epsilon(0.35));
}
