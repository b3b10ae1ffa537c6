#include "sapc/selection.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

namespace sapc {

WaicResult waic(const Eigen::MatrixXd& loglik) {
  const Eigen::Index n = loglik.rows();
  if (n < 2) throw std::invalid_argument("waic: need at least two samples");
  WaicResult out;
  for (Eigen::Index c = 0; c < loglik.cols(); ++c) {
    const auto col = loglik.col(c);
    const double top = col.maxCoeff();
    if (!std::isfinite(top)) {
      out.flagged.push_back(static_cast<int>(c));
      continue;
    }
    const double lse = top + std::log((col.array() - top).exp().sum());
    out.lppd += lse - std::log(static_cast<double>(n));
    const double mean = col.mean();
    out.p_waic += (col.array() - mean).square().sum() / static_cast<double>(n - 1);
  }
  out.waic = -2.0 * (out.lppd - out.p_waic);
  return out;
}

Eigen::MatrixXd pointwise_loglik(const Eigen::MatrixXd& log_rate_samples, const MortalityDataset& data) {
  std::vector<int> cells;
  for (int c = 0; c < data.size(); ++c)
    if (data.observed[c]) cells.push_back(c);
  Eigen::MatrixXd out(log_rate_samples.rows(), static_cast<Eigen::Index>(cells.size()));
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const int c = cells[k];
    const double y = data.counts(c), n = data.exposure(c);
    const double base = y * std::log(n) - std::lgamma(y + 1.0);
    for (Eigen::Index s = 0; s < log_rate_samples.rows(); ++s) {
      const double mu = log_rate_samples(s, c);
      out(s, static_cast<Eigen::Index>(k)) = base + y * mu - n * std::exp(mu);
    }
  }
  return out;
}

ModelFit fit_model(const LatentModel& model, const MortalityDataset& data, const FitOptions& options) {
  const HyperParameters init = initial_hyperparameters(model, data, options.optimize.mode);
  HyperFit hyper = optimize_hyperparameters(model, data, init, options.optimize);
  PosteriorFit posterior =
      options.axial_integration
          ? sample_posterior_axial(model, hyper, data, options.posterior_samples, options.seed, 1.0, options.optimize.mode)
          : sample_posterior(model, hyper.eta, data, options.posterior_samples, options.seed, options.optimize.mode);
  WaicResult score = waic(pointwise_loglik(posterior.log_rate_samples(model), data));
  return ModelFit{model, std::move(hyper), std::move(posterior), std::move(score)};
}

std::string GridEntry::name() const { return pattern.name() + "-" + to_string(structure); }

const GridEntry* ModelGridResult::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name() == name) return &e;
  return nullptr;
}

std::vector<std::pair<SharingPattern, StructureKind>> grid_members(const GridConfig& config, int strata) {
  std::vector<SharingPattern> patterns = config.patterns;
  if (patterns.empty()) {
    const auto all = SharingPattern::all();
    patterns.assign(all.begin(), all.end());
  }
  std::vector<std::pair<SharingPattern, StructureKind>> out;
  for (const auto& p : patterns) {
    if (strata == 1 && p.varies()) continue;
    if (!p.varies()) {
      out.emplace_back(p, StructureKind::independent);
      continue;
    }
    for (StructureKind s : config.structures) {
      if (s == StructureKind::bym2 && config.graph == nullptr) continue;
      out.emplace_back(p, s);
    }
  }
  return out;
}

ModelGridResult fit_grid(const MortalityDataset& data, const GridConfig& config) {
  const auto members = grid_members(config, data.strata_count());
  ModelGridResult result;
  for (const auto& [p, s] : members) result.entries.push_back(GridEntry{p, s, std::nullopt, {}, nullptr});

  auto run = [&](std::size_t k) {
    GridEntry& entry = result.entries[k];
    try {
      const LatentModel model = assemble_model(data.grid, data.strata_count(), entry.pattern, entry.structure,
                                               config.baseline, config.priors, config.graph);
      FitOptions opts = config.fit;
      opts.seed = derive_seed(config.fit.seed, 10 * static_cast<std::uint64_t>(entry.pattern.id()) +
                                                   static_cast<std::uint64_t>(entry.structure));
      auto fit = std::make_shared<ModelFit>(fit_model(model, data, opts));
      entry.score = fit->score;
      if (config.keep_fits) entry.fit = std::move(fit);
    } catch (const std::exception& e) {
      entry.error = e.what();
    }
  };

  const int workers = std::max(1, std::min<int>(config.workers, static_cast<int>(members.size())));
  if (workers == 1) {
    for (std::size_t k = 0; k < members.size(); ++k) run(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < members.size(); k = next++) run(k);
      });
    for (auto& t : pool) t.join();
  }

  for (std::size_t k = 0; k < result.entries.size(); ++k)
    if (result.entries[k].score) result.ranking.push_back(static_cast<int>(k));
  std::stable_sort(result.ranking.begin(), result.ranking.end(), [&](int a, int b) {
    const double wa = result.entries[a].score->waic, wb = result.entries[b].score->waic;
    if (wa != wb) return wa < wb;
    return result.entries[a].name() < result.entries[b].name();
  });
  return result;
}

}  // namespace sapc
