// Command-line front end: simulate, fit, grid, prior-check, hindcast, rr.
#include "sapc/diagnostics.hpp"
#include "sapc/io.hpp"
#include "sapc/simulate.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sapc;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Options {
  std::string config;
  std::string data;
  std::string graph;
  std::string truth;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> models;
  std::vector<std::string> structures;
  bool svg = false;
};

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

RunConfig resolve_config(const Options& o) {
  RunConfig c = o.config.empty() ? parse_run_config(json::object()) : load_run_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.output = o.out;
  if (!o.models.empty()) {
    c.models.clear();
    for (const auto& m : o.models) c.models.push_back(SharingPattern::parse(m));
    c.model = c.models.front();
  }
  if (!o.structures.empty()) {
    c.structures.clear();
    for (const auto& s : o.structures) c.structures.push_back(structure_from_string(s));
    c.structure = c.structures.front();
  }
  return c;
}

fs::path output_dir(const RunConfig& c) {
  fs::path dir(c.output);
  fs::create_directories(dir);
  return dir;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

std::ofstream open_csv(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

json provenance(const std::string& command, const RunConfig& c) {
  const json cj = to_json(c);
  return {{"command", command}, {"version", kVersion}, {"seed", c.seed}, {"config_hash", config_hash(cj)},
          {"config", cj}};
}

MortalityDataset load_data(const Options& o, const RunConfig& c, json& report) {
  if (o.data.empty()) throw UsageError("--data is required");
  const AggregateResult agg = aggregate(read_raw_series(o.data), c.bounds, c.strata);
  report["dropped_rows"] = agg.dropped_rows;
  report["partial_cells"] = agg.partial_cells;
  report["observed_cells"] = agg.data.observed_count();
  report["strata"] = agg.data.strata;
  return agg.data;
}

std::optional<GraphReport> load_graph_if_any(const Options& o, const std::vector<std::string>& strata, json& report) {
  if (o.graph.empty()) return std::nullopt;
  GraphReport g = load_graph(o.graph, strata);
  report["graph"] = {{"components_before_augmentation", g.components_before},
                     {"components_after_augmentation", g.components_after},
                     {"augmented_edges", g.augmented_edges}};
  return g;
}

FitOptions fit_options(const RunConfig& c) {
  FitOptions f;
  f.optimize = c.optimize;
  f.posterior_samples = c.posterior_samples;
  f.seed = c.seed;
  f.axial_integration = c.axial_integration;
  return f;
}

ModelFit fit_configured(const RunConfig& c, const MortalityDataset& data, const AdjacencyGraph* graph) {
  const LatentModel model = assemble_model(data.grid, data.strata_count(), c.model, c.structure,
                                           resolve_baseline(c, data.grid), c.priors, graph);
  return fit_model(model, data, fit_options(c));
}

json hyper_json(const ModelFit& fit) {
  json h = json::object();
  const auto& names = fit.model.hyper_names();
  for (std::size_t k = 0; k < names.size(); ++k) h[names[k]] = fit.hyper.theta(static_cast<Eigen::Index>(k));
  json eta = json::object();
  for (Block b : kBlocks) {
    if (fit.hyper.eta.tau[index(b)]) eta["tau_" + to_string(b)] = *fit.hyper.eta.tau[index(b)];
    if (fit.hyper.eta.rho[index(b)]) eta["rho_" + to_string(b)] = *fit.hyper.eta.rho[index(b)];
  }
  if (fit.hyper.eta.nu0) eta["nu0"] = {(*fit.hyper.eta.nu0)(0), (*fit.hyper.eta.nu0)(1), (*fit.hyper.eta.nu0)(2)};
  return {{"unconstrained", h},
          {"natural", eta},
          {"log_marginal", fit.hyper.objective},
          {"evaluations", fit.hyper.evaluations},
          {"converged", fit.hyper.converged}};
}

json score_json(const WaicResult& w) {
  return {{"waic", w.waic}, {"lppd", w.lppd}, {"p_waic", w.p_waic}, {"flagged_cells", w.flagged}};
}

int find_stratum(const MortalityDataset& data, const std::string& name, const char* field) {
  if (name.empty()) return 0;
  const auto it = std::find(data.strata.begin(), data.strata.end(), name);
  if (it == data.strata.end()) throw ConfigError(field, "unknown stratum '" + name + "'");
  return static_cast<int>(it - data.strata.begin());
}

// ---------------------------------------------------------------- commands

int cmd_simulate(const Options& o) {
  RunConfig c = resolve_config(o);
  const GridSpec grid = c.bounds.grid();
  std::vector<std::string> strata = c.strata;
  if (strata.empty())
    for (int r = 0; r < c.sim_strata; ++r) strata.push_back("S" + std::to_string(r + 1));
  json report = provenance("simulate", c);
  const auto graph = load_graph_if_any(o, strata, report);
  const int R = static_cast<int>(strata.size());
  const LatentModel model = assemble_model(grid, R, c.model, c.structure, resolve_baseline(c, grid), c.priors,
                                           graph ? &graph->graph : nullptr);
  HyperParameters eta = default_simulation_hyperparameters(model, c.sim_rho);
  for (Block b : kBlocks)
    if (c.sim_tau[index(b)] && eta.tau[index(b)]) eta.tau[index(b)] = c.sim_tau[index(b)];

  SyntheticData sim = simulate(model, eta, Eigen::VectorXd::Constant(1, c.sim_exposure), c.seed, strata);
  sim.data.first_age = c.bounds.age_min;
  sim.data.first_year = c.bounds.year_min;

  const fs::path dir = output_dir(c);
  {
    auto out = open_csv(dir / "data.csv");
    write_raw_series(out, raw_series_from_dataset(sim.data));
  }
  {
    auto out = open_csv(dir / "truth.csv");
    out << "stratum,age,year,log_rate\n";
    const int w = grid.interval_width();
    for (int r = 0; r < R; ++r)
      for (int j = 1; j <= grid.periods(); ++j)
        for (int i = 1; i <= grid.ages(); ++i)
          out << strata[r] << ',' << c.bounds.age_min + (i - 1) * w << ',' << c.bounds.year_min + (j - 1) * w << ','
              << format_number(sim.log_rates(sim.data.position(r, i, j))) << '\n';
  }
  report["model"] = model.name();
  report["strata"] = strata;
  report["cells"] = sim.data.size();
  write_json(dir / "simulate.json", report);
  std::cout << "simulated " << model.name() << " on " << grid.ages() << "x" << grid.periods() << "x" << R << " into "
            << dir.string() << '\n';
  return 0;
}

int cmd_fit(const Options& o) {
  RunConfig c = resolve_config(o);
  json report = provenance("fit", c);
  const MortalityDataset data = load_data(o, c, report);
  const auto graph = load_graph_if_any(o, data.strata, report);
  const ModelFit fit = fit_configured(c, data, graph ? &graph->graph : nullptr);

  std::optional<Eigen::VectorXd> truth;
  if (!o.truth.empty()) {
    std::ifstream in(o.truth);
    if (!in) throw UsageError("cannot open '" + o.truth + "'");
    const CsvTable t = read_csv(in);
    const int cs = t.column("stratum"), ca = t.column("age"), cy = t.column("year"), cl = t.column("log_rate");
    if (cs < 0 || ca < 0 || cy < 0 || cl < 0) throw UsageError("truth file needs stratum,age,year,log_rate");
    Eigen::VectorXd v = Eigen::VectorXd::Constant(data.size(), std::numeric_limits<double>::quiet_NaN());
    for (const auto& row : t.rows) {
      const int r = find_stratum(data, row[cs], "truth.stratum");
      const int i = (std::stoi(row[ca]) - c.bounds.age_min) / c.bounds.width + 1;
      const int j = (std::stoi(row[cy]) - c.bounds.year_min) / c.bounds.width + 1;
      if (i < 1 || i > data.grid.ages() || j < 1 || j > data.grid.periods()) continue;
      v(data.position(r, i, j)) = parse_number(row[cl]);
    }
    truth = v;
  }

  const Eigen::MatrixXd mu = fit.posterior.log_rate_samples(fit.model);
  const fs::path dir = output_dir(c);
  int covered = 0, compared = 0;
  {
    auto out = open_csv(dir / "fitted.csv");
    out << "stratum,age,year,deaths,exposure,observed,partial,log_rate_median,log_rate_lower,log_rate_upper\n";
    const int w = data.grid.interval_width();
    std::vector<double> col(static_cast<std::size_t>(mu.rows()));
    for (int r = 0; r < data.strata_count(); ++r)
      for (int j = 1; j <= data.grid.periods(); ++j)
        for (int i = 1; i <= data.grid.ages(); ++i) {
          const int p = data.position(r, i, j);
          Eigen::VectorXd::Map(col.data(), mu.rows()) = mu.col(p);
          const double lo = quantile(col, 0.025), hi = quantile(col, 0.975);
          out << data.strata[r] << ',' << c.bounds.age_min + (i - 1) * w << ',' << c.bounds.year_min + (j - 1) * w
              << ',' << format_number(data.counts(p)) << ',' << format_number(data.exposure(p)) << ','
              << int(data.observed[p]) << ',' << int(data.partial[p]) << ',' << format_number(quantile(col, 0.5))
              << ',' << format_number(lo) << ',' << format_number(hi) << '\n';
          if (truth && std::isfinite((*truth)(p))) {
            ++compared;
            covered += (*truth)(p) >= lo && (*truth)(p) <= hi;
          }
        }
  }
  report["model"] = fit.model.name();
  report["hyperparameters"] = hyper_json(fit);
  report["score"] = score_json(fit.score);
  if (truth) report["coverage"] = {{"cells", compared}, {"covered_95", compared ? double(covered) / compared : 0.0}};
  write_json(dir / "fit.json", report);
  std::cout << fit.model.name() << ": WAIC " << fit.score.waic;
  if (truth && compared) std::cout << ", 95% coverage of true log rates " << double(covered) / compared;
  std::cout << '\n';
  return 0;
}

int cmd_grid(const Options& o) {
  RunConfig c = resolve_config(o);
  json report = provenance("grid", c);
  const MortalityDataset data = load_data(o, c, report);
  const auto graph = load_graph_if_any(o, data.strata, report);

  GridConfig gc;
  gc.patterns = c.models;
  gc.structures = c.structures;
  gc.graph = graph ? &graph->graph : nullptr;
  gc.baseline = resolve_baseline(c, data.grid);
  gc.priors = c.priors;
  gc.fit = fit_options(c);
  gc.workers = c.workers;
  gc.keep_fits = false;
  const ModelGridResult result = fit_grid(data, gc);

  const fs::path dir = output_dir(c);
  auto out = open_csv(dir / "grid.csv");
  out << "pattern,structure,waic,lppd,p_waic\n";
  json entries = json::array();
  for (const auto& e : result.entries) {
    out << e.pattern.name() << ',' << to_string(e.structure) << ',';
    if (e.score)
      out << format_number(e.score->waic) << ',' << format_number(e.score->lppd) << ','
          << format_number(e.score->p_waic);
    else
      out << "nan,nan,nan";
    out << '\n';
    json ej = {{"name", e.name()}};
    if (e.score) ej["score"] = score_json(*e.score);
    else ej["error"] = e.error;
    entries.push_back(ej);
  }
  json ranking = json::array();
  for (int k : result.ranking) ranking.push_back(result.entries[static_cast<std::size_t>(k)].name());
  report["entries"] = entries;
  report["ranking"] = ranking;
  write_json(dir / "grid.json", report);
  std::cout << result.ranking.size() << " of " << result.entries.size() << " models fitted";
  if (!result.ranking.empty()) std::cout << "; best " << ranking.front().get<std::string>();
  std::cout << '\n';
  return 0;
}

int cmd_prior_check(const Options& o) {
  RunConfig c = resolve_config(o);
  json report = provenance("prior-check", c);
  const MortalityDataset data = load_data(o, c, report);
  const auto graph = load_graph_if_any(o, data.strata, report);
  const LatentModel model = assemble_model(data.grid, data.strata_count(), c.model, c.structure,
                                           resolve_baseline(c, data.grid), c.priors, graph ? &graph->graph : nullptr);
  const PriorPredictiveSummary s = sample_prior_predictive(model, data, c.priors, c.prior_sims, c.seed);
  const fs::path dir = output_dir(c);
  auto out = open_csv(dir / "prior_check.csv");
  out << "sim,max_count,min_count\n";
  for (std::size_t k = 0; k < s.max_count.size(); ++k)
    out << k << ',' << format_number(s.max_count[k]) << ',' << format_number(s.min_count[k]) << '\n';
  report["model"] = model.name();
  report["sims"] = s.sims;
  report["degenerate"] = s.degenerate;
  report["observed_max"] = s.observed_max;
  report["observed_min"] = s.observed_min;
  if (s.frac_max_exceeds) report["fraction_max_exceeds_observed"] = *s.frac_max_exceeds;
  if (s.frac_min_below) report["fraction_min_below_observed"] = *s.frac_min_below;
  write_json(dir / "prior_check.json", report);
  std::cout << s.sims << " prior predictive draws, " << s.degenerate << " degenerate\n";
  return 0;
}

int cmd_hindcast(const Options& o) {
  RunConfig c = resolve_config(o);
  json report = provenance("hindcast", c);
  MortalityDataset data = load_data(o, c, report);
  const auto graph = load_graph_if_any(o, data.strata, report);
  const int r = find_stratum(data, c.hindcast_stratum, "hindcast.stratum");
  const MortalityDataset full = data;
  const std::vector<int> masked = mask_early_periods(data, r, c.hindcast_periods);
  if (masked.empty()) throw UsageError("hindcast: no observed cells to mask");

  const ModelFit fit = fit_configured(c, data, graph ? &graph->graph : nullptr);
  const HindcastResult h = hindcast(fit, data, masked, derive_seed(c.seed, 100));
  Eigen::VectorXd y(static_cast<Eigen::Index>(masked.size()));
  for (std::size_t k = 0; k < masked.size(); ++k) y(static_cast<Eigen::Index>(k)) = full.counts(masked[k]);
  const PitResult p = pit(h.samples, y);

  const fs::path dir = output_dir(c);
  int covered = 0;
  {
    auto out = open_csv(dir / "hindcast.csv");
    out << "stratum,age,year,observed,median,lower,upper,pit\n";
    const int w = data.grid.interval_width();
    const int cells = data.grid.cells();
    for (std::size_t k = 0; k < masked.size(); ++k) {
      const int local = masked[k] % cells;
      const int i = local % data.grid.ages() + 1, j = local / data.grid.ages() + 1;
      const auto e = static_cast<Eigen::Index>(k);
      covered += y(e) >= h.lower(e) && y(e) <= h.upper(e);
      out << data.strata[masked[k] / cells] << ',' << c.bounds.age_min + (i - 1) * w << ','
          << c.bounds.year_min + (j - 1) * w << ',' << format_number(y(e)) << ',' << format_number(h.median(e)) << ','
          << format_number(h.lower(e)) << ',' << format_number(h.upper(e)) << ',' << format_number(p.values[k])
          << '\n';
    }
  }
  {
    auto out = open_csv(dir / "pit_density.csv");
    out << "x,density\n";
    for (std::size_t g = 0; g < p.grid.size(); ++g)
      out << format_number(p.grid[g]) << ',' << format_number(p.density[g]) << '\n';
  }
  {
    auto out = open_csv(dir / "pit_histogram.csv");
    out << "bin_lower,bin_upper,count\n";
    const auto bins = static_cast<double>(p.histogram.size());
    for (std::size_t b = 0; b < p.histogram.size(); ++b)
      out << format_number(b / bins) << ',' << format_number((b + 1) / bins) << ',' << p.histogram[b] << '\n';
  }
  if (o.svg) write_line_svg((dir / "pit_density.svg").string(), "PIT density", p.grid, {{"PIT", p.density, {}, {}}});
  const double coverage = static_cast<double>(covered) / static_cast<double>(masked.size());
  report["model"] = fit.model.name();
  report["masked_stratum"] = data.strata[static_cast<std::size_t>(r)];
  report["masked_periods"] = c.hindcast_periods;
  report["masked_cells"] = masked.size();
  report["coverage_95"] = coverage;
  report["pit_ks_distance"] = ks_uniform_distance(p.values);
  write_json(dir / "hindcast.json", report);
  std::cout << "hindcast of " << masked.size() << " cells, 95% interval coverage " << coverage << '\n';
  return 0;
}

int cmd_rr(const Options& o) {
  RunConfig c = resolve_config(o);
  json report = provenance("rr", c);
  const MortalityDataset data = load_data(o, c, report);
  if (data.strata_count() < 2) throw UsageError("rr needs at least two strata");
  std::vector<Block> blocks;
  for (Block b : {Block::period, Block::cohort})
    if (relative_risk_licensed(c.model, b)) blocks.push_back(b);
  if (blocks.empty())
    throw UsageError("pattern " + c.model.name() + " licenses no cross-strata relative risk (use M2, M3 or M4)");
  const auto graph = load_graph_if_any(o, data.strata, report);
  const int ref = find_stratum(data, c.rr_reference, "rr.reference");
  const ModelFit fit = fit_configured(c, data, graph ? &graph->graph : nullptr);

  const fs::path dir = output_dir(c);
  auto out = open_csv(dir / "rr.csv");
  out << "block,stratum,reference,index,median,lower,upper\n";
  json curves = json::array();
  for (Block b : blocks) {
    std::vector<SvgSeries> series;
    for (int r = 0; r < data.strata_count(); ++r) {
      if (r == ref) continue;
      const RelativeRiskCurve rr = cross_strata_rr(fit, b, r, ref);
      for (Eigen::Index k = 0; k < rr.median.size(); ++k)
        out << to_string(b) << ',' << data.strata[r] << ',' << data.strata[ref] << ',' << k + 1 << ','
            << format_number(rr.median(k)) << ',' << format_number(rr.lower(k)) << ',' << format_number(rr.upper(k))
            << '\n';
      curves.push_back({{"block", to_string(b)}, {"stratum", data.strata[r]}, {"reference", data.strata[ref]}});
      auto as_vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
      series.push_back({data.strata[r], as_vec(rr.median), as_vec(rr.lower), as_vec(rr.upper)});
    }
    if (o.svg && !series.empty()) {
      std::vector<double> x(series.front().y.size());
      for (std::size_t k = 0; k < x.size(); ++k) x[k] = static_cast<double>(k + 1);
      write_line_svg((dir / ("rr_" + to_string(b) + ".svg")).string(),
                     "Relative risk by " + to_string(b) + " vs " + data.strata[ref], x, series);
    }
  }
  report["model"] = fit.model.name();
  report["curves"] = curves;
  report["normalization"] = "first index equals 1";
  report["disclaimer"] = kRelativeRiskDisclaimer;
  write_json(dir / "rr.json", report);
  std::cout << curves.size() << " relative-risk curves written\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stratified age-period-cohort mortality models"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--graph", o.graph, "Adjacency CSV (from,to,augmented)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Master seed");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--models", o.models, "Sharing patterns, e.g. M1,M4")->delimiter(',');
    sub->add_option("--structures", o.structures, "independent, exchangeable, bym2")->delimiter(',');
    sub->add_flag("--svg", o.svg, "Also write SVG plots");
  };
  auto with_data = [&](CLI::App* sub) {
    common(sub);
    sub->add_option("--data", o.data, "CSV with stratum,age,year,deaths,exposure")->check(CLI::ExistingFile);
  };

  using Command = int (*)(const Options&);
  std::vector<std::pair<CLI::App*, Command>> commands;
  auto* sim = app.add_subcommand("simulate", "Generate synthetic data from a specified model");
  common(sim);
  commands.emplace_back(sim, cmd_simulate);
  auto* fit = app.add_subcommand("fit", "Fit one model");
  with_data(fit);
  fit->add_option("--truth", o.truth, "True log rates (from simulate) for a coverage summary")
      ->check(CLI::ExistingFile);
  commands.emplace_back(fit, cmd_fit);
  auto* grid = app.add_subcommand("grid", "Fit and score the model grid");
  with_data(grid);
  commands.emplace_back(grid, cmd_grid);
  auto* prior = app.add_subcommand("prior-check", "Prior predictive summary");
  with_data(prior);
  commands.emplace_back(prior, cmd_prior_check);
  auto* hc = app.add_subcommand("hindcast", "Mask early periods of a stratum, predict them, and compute PIT");
  with_data(hc);
  commands.emplace_back(hc, cmd_hindcast);
  auto* rr = app.add_subcommand("rr", "Cross-strata relative-risk curves");
  with_data(rr);
  commands.emplace_back(rr, cmd_rr);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    for (const auto& [sub, run] : commands)
      if (sub->parsed()) return run(o);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::overflow_error& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
