#include "sapc/io.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

namespace sapc {

double parse_number(const std::string& s) {
  if (s.empty()) throw std::invalid_argument("empty number");
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw std::invalid_argument("not a number: '" + s + "'");
  // subnormal results also set ERANGE but are exact round trips
  if (errno == ERANGE && std::isinf(v)) throw std::out_of_range("number overflows: '" + s + "'");
  return v;
}

using nlohmann::json;

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    return parse_number(s);
  } catch (const std::exception&) {
    throw std::invalid_argument("cannot parse " + what + " '" + s + "'");
  }
}

int parse_int(const std::string& s, const std::string& what) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw std::invalid_argument("cannot parse " + what + " '" + s + "'");
  return v;
}

bool parse_bool(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s.empty() || s == "0" || s == "false" || s == "no") return false;
  if (s == "1" || s == "true" || s == "yes") return true;
  throw std::invalid_argument("cannot parse boolean '" + s + "'");
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open '" + path + "'");
  return in;
}

}  // namespace

// ---------------------------------------------------------------- CSV

int CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    if (t.header.empty()) {
      t.header = split_fields(line);
      continue;
    }
    auto fields = split_fields(line);
    if (fields.size() != t.header.size())
      throw std::invalid_argument("csv row has " + std::to_string(fields.size()) + " fields, header has " +
                                  std::to_string(t.header.size()));
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw std::invalid_argument("csv input is empty");
  return t;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------- raw series

void RawSeries::validate() const {
  std::set<std::tuple<std::string, int, int>> seen;
  for (const auto& r : rows) {
    if (!seen.emplace(r.stratum, r.age, r.year).second)
      throw std::invalid_argument("duplicate row for stratum '" + r.stratum + "', age " + std::to_string(r.age) +
                                  ", year " + std::to_string(r.year));
    if (!(r.deaths >= 0.0) || r.deaths != std::floor(r.deaths))
      throw std::invalid_argument("deaths must be a non-negative integer (stratum '" + r.stratum + "')");
    if (!(r.exposure >= 0.0)) throw std::invalid_argument("negative exposure (stratum '" + r.stratum + "')");
    if (r.deaths > 0.0 && r.exposure == 0.0)
      throw std::invalid_argument("deaths without exposure (stratum '" + r.stratum + "', age " +
                                  std::to_string(r.age) + ", year " + std::to_string(r.year) + ")");
  }
}

RawSeries read_raw_series(std::istream& in) {
  const CsvTable t = read_csv(in);
  const int cs = t.column("stratum"), ca = t.column("age"), cy = t.column("year"), cd = t.column("deaths"),
            ce = t.column("exposure");
  if (cs < 0 || ca < 0 || cy < 0 || cd < 0 || ce < 0)
    throw std::invalid_argument("data file needs columns stratum,age,year,deaths,exposure");
  RawSeries raw;
  raw.rows.reserve(t.rows.size());
  for (const auto& f : t.rows)
    raw.rows.push_back(RawRow{f[cs], parse_int(f[ca], "age"), parse_int(f[cy], "year"), parse_double(f[cd], "deaths"),
                              parse_double(f[ce], "exposure")});
  raw.validate();
  return raw;
}

RawSeries read_raw_series(const std::string& path) {
  auto in = open_input(path);
  return read_raw_series(in);
}

void write_raw_series(std::ostream& out, const RawSeries& raw) {
  out << "stratum,age,year,deaths,exposure\n";
  for (const auto& r : raw.rows)
    out << r.stratum << ',' << r.age << ',' << r.year << ',' << format_number(r.deaths) << ','
        << format_number(r.exposure) << '\n';
}

RawSeries raw_series_from_dataset(const MortalityDataset& data) {
  RawSeries raw;
  const int w = data.grid.interval_width();
  for (int r = 0; r < data.strata_count(); ++r)
    for (int j = 1; j <= data.grid.periods(); ++j)
      for (int i = 1; i <= data.grid.ages(); ++i) {
        const int c = data.position(r, i, j);
        if (!data.observed[c]) continue;
        raw.rows.push_back(RawRow{data.strata[r], data.first_age + (i - 1) * w, data.first_year + (j - 1) * w,
                                  data.counts(c), data.exposure(c)});
      }
  return raw;
}

// ---------------------------------------------------------------- aggregation

GridSpec GridBounds::grid() const {
  validate();
  return GridSpec((age_max - age_min) / width, (year_max - year_min) / width, width);
}

void GridBounds::validate() const {
  if (width < 1) throw ConfigError("grid.width", "bin width must be positive");
  if (age_max <= age_min) throw ConfigError("grid.age_max", "must exceed grid.age_min");
  if (year_max <= year_min) throw ConfigError("grid.year_max", "must exceed grid.year_min");
  if ((age_max - age_min) % width != 0)
    throw ConfigError("grid.width", "bin width " + std::to_string(width) + " does not divide the age range " +
                                        std::to_string(age_max - age_min));
  if ((year_max - year_min) % width != 0)
    throw ConfigError("grid.width", "bin width " + std::to_string(width) + " does not divide the year range " +
                                        std::to_string(year_max - year_min));
  if ((age_max - age_min) / width < 3 || (year_max - year_min) / width < 3)
    throw ConfigError("grid", "need at least 3 age groups and 3 periods");
}

AggregateResult aggregate(const RawSeries& raw, const GridBounds& bounds, const std::vector<std::string>& strata) {
  raw.validate();
  const GridSpec grid = bounds.grid();
  std::vector<std::string> names = strata;
  const bool fixed = !names.empty();
  if (!fixed) {
    std::set<std::string> seen;
    for (const auto& r : raw.rows)
      if (seen.insert(r.stratum).second) names.push_back(r.stratum);
  }
  if (names.empty()) throw std::invalid_argument("aggregate: no strata in the data");
  std::unordered_map<std::string, int> lookup;
  for (std::size_t r = 0; r < names.size(); ++r) lookup.emplace(names[r], static_cast<int>(r));

  AggregateResult out{MortalityDataset(grid, names), 0, 0};
  MortalityDataset& d = out.data;
  d.first_age = bounds.age_min;
  d.first_year = bounds.year_min;
  std::vector<int> rows_in(static_cast<std::size_t>(d.size()), 0);
  for (const auto& row : raw.rows) {
    const auto it = lookup.find(row.stratum);
    if (it == lookup.end() || row.age < bounds.age_min || row.age >= bounds.age_max || row.year < bounds.year_min ||
        row.year >= bounds.year_max) {
      ++out.dropped_rows;
      continue;
    }
    const int i = (row.age - bounds.age_min) / bounds.width + 1;
    const int j = (row.year - bounds.year_min) / bounds.width + 1;
    const int c = d.position(it->second, i, j);
    d.counts(c) += row.deaths;
    d.exposure(c) += row.exposure;
    ++rows_in[static_cast<std::size_t>(c)];
  }
  const int full = *std::max_element(rows_in.begin(), rows_in.end());
  for (int c = 0; c < d.size(); ++c) {
    const int n = rows_in[static_cast<std::size_t>(c)];
    d.observed[c] = n > 0 && d.exposure(c) > 0.0;
    d.partial[c] = n > 0 && n < full;
    out.partial_cells += d.partial[c];
  }
  d.validate();
  return out;
}

// ---------------------------------------------------------------- graphs

GraphReport load_graph(std::istream& in, const std::vector<std::string>& strata) {
  const CsvTable t = read_csv(in);
  const int cf = t.column("from"), ct = t.column("to"), ca = t.column("augmented");
  if (cf < 0 || ct < 0) throw std::invalid_argument("graph file needs columns from,to");
  std::unordered_map<std::string, int> lookup;
  for (std::size_t r = 0; r < strata.size(); ++r) lookup.emplace(strata[r], static_cast<int>(r));
  auto id = [&](const std::string& name) {
    const auto it = lookup.find(name);
    if (it == lookup.end()) throw std::out_of_range("graph refers to unknown stratum '" + name + "'");
    return it->second;
  };

  std::vector<AdjacencyGraph::Edge> edges;
  GraphReport report{AdjacencyGraph(static_cast<int>(strata.size())), {}, {}, {}};
  for (const auto& f : t.rows) {
    const int a = id(f[cf]), b = id(f[ct]);
    if (a == b) throw std::invalid_argument("graph has a self-loop at '" + f[cf] + "'");
    const bool aug = ca >= 0 && parse_bool(f[ca]);
    edges.push_back({a, b, aug});
    if (aug) report.augmented_edges.emplace_back(f[cf], f[ct]);
  }
  report.graph = AdjacencyGraph(static_cast<int>(strata.size()), std::move(edges));
  auto named = [&](const std::vector<std::vector<int>>& comps) {
    std::vector<std::vector<std::string>> out;
    for (const auto& comp : comps) {
      std::vector<std::string> names;
      for (int v : comp) names.push_back(strata[static_cast<std::size_t>(v)]);
      out.push_back(std::move(names));
    }
    return out;
  };
  report.components_before = named(report.graph.without_augmented().components());
  report.components_after = named(report.graph.components());
  return report;
}

GraphReport load_graph(const std::string& path, const std::vector<std::string>& strata) {
  auto in = open_input(path);
  return load_graph(in, strata);
}

// ---------------------------------------------------------------- run config

namespace {

void reject_unknown(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "must be an object");
  for (const auto& [k, v] : obj.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* key) { return k == key; }))
      throw ConfigError(path.empty() ? k : path + "." + k, "unknown key");
  }
}

template <typename T>
void read(const json& obj, const char* key, const std::string& path, T& target) {
  if (!obj.contains(key)) return;
  try {
    target = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path.empty() ? std::string(key) : path + "." + key, e.what());
  }
}

Block block_from_string(const std::string& name, const std::string& field) {
  for (Block b : kBlocks)
    if (to_string(b) == name) return b;
  throw ConfigError(field, "unknown block '" + name + "'");
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  reject_unknown(j, "", {"grid", "strata", "baseline", "priors", "models", "structures", "model", "seed", "inference",
                         "output", "prior_check", "hindcast", "rr", "simulate"});
  if (j.contains("grid")) {
    const json& g = j["grid"];
    reject_unknown(g, "grid", {"age_min", "age_max", "year_min", "year_max", "width"});
    read(g, "age_min", "grid", c.bounds.age_min);
    read(g, "age_max", "grid", c.bounds.age_max);
    read(g, "year_min", "grid", c.bounds.year_min);
    read(g, "year_max", "grid", c.bounds.year_max);
    read(g, "width", "grid", c.bounds.width);
  }
  c.bounds.validate();
  read(j, "strata", "", c.strata);

  if (j.contains("baseline")) {
    const json& b = j["baseline"];
    reject_unknown(b, "baseline", {"coordinates", "triple", "form"});
    BaselineSpec spec;
    std::string coords = "age-cohort", form = "point-two-slopes";
    read(b, "coordinates", "baseline", coords);
    read(b, "form", "baseline", form);
    if (coords == "age-cohort") spec.coordinates = BaselineCoordinates::age_cohort;
    else if (coords == "age-period") spec.coordinates = BaselineCoordinates::age_period;
    else throw ConfigError("baseline.coordinates", "expected age-cohort or age-period");
    if (form == "three-points") spec.form = BaselineForm::three_points;
    else if (form == "point-two-slopes") spec.form = BaselineForm::point_two_slopes;
    else throw ConfigError("baseline.form", "expected three-points or point-two-slopes");
    std::vector<std::array<int, 2>> triple;
    read(b, "triple", "baseline", triple);
    if (triple.size() != 3) throw ConfigError("baseline.triple", "needs exactly three index pairs");
    for (int m = 0; m < 3; ++m) spec.triple[m] = {triple[m][0], triple[m][1]};
    try {
      baseline_cells(c.bounds.grid(), spec);
    } catch (const std::exception& e) {
      throw ConfigError("baseline.triple", e.what());
    }
    c.baseline = spec;
  }

  if (j.contains("priors")) {
    const json& p = j["priors"];
    reject_unknown(p, "priors",
                   {"q", "epsilon", "nu0_mean", "nu0_variance", "exchangeable_variance", "bym2_u", "bym2_alpha"});
    read(p, "q", "priors", c.priors.q);
    if (!(c.priors.q > 0.0 && c.priors.q < 1.0)) throw ConfigError("priors.q", "must lie in (0, 1)");
    if (p.contains("epsilon")) {
      const json& e = p["epsilon"];
      reject_unknown(e, "priors.epsilon", {"baseline", "age", "period", "cohort"});
      for (Block b : kBlocks) {
        read(e, to_string(b).c_str(), "priors.epsilon", c.priors.epsilon[index(b)]);
        if (!(c.priors.epsilon[index(b)] > 0.0)) throw ConfigError("priors.epsilon." + to_string(b), "must be positive");
      }
    }
    std::vector<double> mean, var;
    read(p, "nu0_mean", "priors", mean);
    read(p, "nu0_variance", "priors", var);
    if (!mean.empty()) {
      if (mean.size() != 3) throw ConfigError("priors.nu0_mean", "needs three values");
      c.priors.baseline_mean.mean = Eigen::Vector3d(mean[0], mean[1], mean[2]);
    }
    if (!var.empty()) {
      if (var.size() != 3 || std::any_of(var.begin(), var.end(), [](double v) { return !(v > 0.0); }))
        throw ConfigError("priors.nu0_variance", "needs three positive values");
      c.priors.baseline_mean.variance = Eigen::Vector3d(var[0], var[1], var[2]);
    }
    read(p, "exchangeable_variance", "priors", c.priors.exchangeable_variance);
    if (!(c.priors.exchangeable_variance > 0.0)) throw ConfigError("priors.exchangeable_variance", "must be positive");
    read(p, "bym2_u", "priors", c.priors.bym2_u);
    read(p, "bym2_alpha", "priors", c.priors.bym2_alpha);
    if (!(c.priors.bym2_u > 0.0 && c.priors.bym2_u < 1.0)) throw ConfigError("priors.bym2_u", "must lie in (0, 1)");
    if (!(c.priors.bym2_alpha > 0.0 && c.priors.bym2_alpha < 1.0))
      throw ConfigError("priors.bym2_alpha", "must lie in (0, 1)");
  }

  std::vector<std::string> models, structures;
  read(j, "models", "", models);
  read(j, "structures", "", structures);
  try {
    for (const auto& m : models) c.models.push_back(SharingPattern::parse(m));
  } catch (const std::invalid_argument& e) {
    throw ConfigError("models", e.what());
  }
  if (!structures.empty()) {
    c.structures.clear();
    try {
      for (const auto& s : structures) c.structures.push_back(structure_from_string(s));
    } catch (const std::invalid_argument& e) {
      throw ConfigError("structures", e.what());
    }
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    reject_unknown(m, "model", {"pattern", "structure"});
    std::string pattern = c.model.name(), structure = to_string(c.structure);
    read(m, "pattern", "model", pattern);
    read(m, "structure", "model", structure);
    try {
      c.model = SharingPattern::parse(pattern);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("model.pattern", e.what());
    }
    try {
      c.structure = structure_from_string(structure);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("model.structure", e.what());
    }
  }
  read(j, "seed", "", c.seed);

  if (j.contains("inference")) {
    const json& in = j["inference"];
    reject_unknown(in, "inference", {"max_evals", "tol", "posterior_samples", "axial", "workers", "initial_step"});
    read(in, "max_evals", "inference", c.optimize.max_evals);
    read(in, "tol", "inference", c.optimize.tol);
    read(in, "initial_step", "inference", c.optimize.initial_step);
    read(in, "posterior_samples", "inference", c.posterior_samples);
    read(in, "axial", "inference", c.axial_integration);
    read(in, "workers", "inference", c.workers);
    if (c.optimize.max_evals < 1) throw ConfigError("inference.max_evals", "must be positive");
    if (!(c.optimize.tol > 0.0)) throw ConfigError("inference.tol", "must be positive");
    if (c.posterior_samples < 2) throw ConfigError("inference.posterior_samples", "must be at least 2");
    if (c.workers < 1) throw ConfigError("inference.workers", "must be positive");
  }
  read(j, "output", "", c.output);

  if (j.contains("prior_check")) {
    reject_unknown(j["prior_check"], "prior_check", {"sims"});
    read(j["prior_check"], "sims", "prior_check", c.prior_sims);
    if (c.prior_sims < 1) throw ConfigError("prior_check.sims", "must be positive");
  }
  if (j.contains("hindcast")) {
    reject_unknown(j["hindcast"], "hindcast", {"stratum", "periods"});
    read(j["hindcast"], "stratum", "hindcast", c.hindcast_stratum);
    read(j["hindcast"], "periods", "hindcast", c.hindcast_periods);
    if (c.hindcast_periods < 1 || c.hindcast_periods >= c.bounds.grid().periods())
      throw ConfigError("hindcast.periods", "must lie in 1..T-1");
  }
  if (j.contains("rr")) {
    reject_unknown(j["rr"], "rr", {"reference"});
    read(j["rr"], "reference", "rr", c.rr_reference);
  }
  if (j.contains("simulate")) {
    const json& s = j["simulate"];
    reject_unknown(s, "simulate", {"strata", "exposure", "rho", "tau"});
    read(s, "strata", "simulate", c.sim_strata);
    read(s, "exposure", "simulate", c.sim_exposure);
    read(s, "rho", "simulate", c.sim_rho);
    if (c.sim_strata < 1) throw ConfigError("simulate.strata", "must be positive");
    if (!(c.sim_exposure > 0.0)) throw ConfigError("simulate.exposure", "must be positive");
    if (s.contains("tau")) {
      reject_unknown(s["tau"], "simulate.tau", {"baseline", "age", "period", "cohort"});
      for (const auto& [k, v] : s["tau"].items()) {
        const Block b = block_from_string(k, "simulate.tau." + k);
        if (!v.is_number() || !(v.get<double>() > 0.0)) throw ConfigError("simulate.tau." + k, "must be positive");
        c.sim_tau[index(b)] = v.get<double>();
      }
    }
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  auto in = open_input(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("<file>", std::string("not valid JSON: ") + e.what());
  }
  return parse_run_config(j);
}

json to_json(const RunConfig& c) {
  json j;
  j["grid"] = {{"age_min", c.bounds.age_min},
               {"age_max", c.bounds.age_max},
               {"year_min", c.bounds.year_min},
               {"year_max", c.bounds.year_max},
               {"width", c.bounds.width}};
  j["strata"] = c.strata;
  if (c.baseline) {
    json triple = json::array();
    for (const auto& [a, b] : c.baseline->triple) triple.push_back({a, b});
    j["baseline"] = {{"coordinates", to_string(c.baseline->coordinates)},
                     {"form", to_string(c.baseline->form)},
                     {"triple", triple}};
  }
  json eps;
  for (Block b : kBlocks) eps[to_string(b)] = c.priors.epsilon[index(b)];
  const auto& bm = c.priors.baseline_mean;
  j["priors"] = {{"q", c.priors.q},
                 {"epsilon", eps},
                 {"nu0_mean", {bm.mean(0), bm.mean(1), bm.mean(2)}},
                 {"nu0_variance", {bm.variance(0), bm.variance(1), bm.variance(2)}},
                 {"exchangeable_variance", c.priors.exchangeable_variance},
                 {"bym2_u", c.priors.bym2_u},
                 {"bym2_alpha", c.priors.bym2_alpha}};
  json models = json::array(), structures = json::array();
  for (const auto& m : c.models) models.push_back(m.name());
  for (auto s : c.structures) structures.push_back(to_string(s));
  j["models"] = models;
  j["structures"] = structures;
  j["model"] = {{"pattern", c.model.name()}, {"structure", to_string(c.structure)}};
  j["seed"] = c.seed;
  j["inference"] = {{"max_evals", c.optimize.max_evals},
                    {"tol", c.optimize.tol},
                    {"initial_step", c.optimize.initial_step},
                    {"posterior_samples", c.posterior_samples},
                    {"axial", c.axial_integration},
                    {"workers", c.workers}};
  j["output"] = c.output;
  j["prior_check"] = {{"sims", c.prior_sims}};
  j["hindcast"] = {{"stratum", c.hindcast_stratum}, {"periods", c.hindcast_periods}};
  j["rr"] = {{"reference", c.rr_reference}};
  json tau = json::object();
  for (Block b : kBlocks)
    if (c.sim_tau[index(b)]) tau[to_string(b)] = *c.sim_tau[index(b)];
  j["simulate"] = {{"strata", c.sim_strata}, {"exposure", c.sim_exposure}, {"rho", c.sim_rho}, {"tau", tau}};
  return j;
}

std::string config_hash(const json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

BaselineSpec resolve_baseline(const RunConfig& config, const GridSpec& grid) {
  return config.baseline ? *config.baseline : default_baseline(grid);
}

// ---------------------------------------------------------------- SVG

void write_line_svg(const std::string& path, const std::string& title, const std::vector<double>& x,
                    const std::vector<SvgSeries>& series) {
  if (x.empty()) throw std::invalid_argument("write_line_svg: no points");
  constexpr double width = 640, height = 400, margin = 50;
  double xmin = *std::min_element(x.begin(), x.end()), xmax = *std::max_element(x.begin(), x.end());
  double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  for (const auto& s : series)
    for (const auto* v : {&s.y, &s.lower, &s.upper})
      for (double y : *v)
        if (std::isfinite(y)) {
          ymin = std::min(ymin, y);
          ymax = std::max(ymax, y);
        }
  if (!std::isfinite(ymin)) ymin = 0.0, ymax = 1.0;
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  auto px = [&](double v) { return margin + (v - xmin) / (xmax - xmin) * (width - 2 * margin); };
  auto py = [&](double v) { return height - margin - (v - ymin) / (ymax - ymin) * (height - 2 * margin); };
  static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << width / 2 << "\" y=\"25\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
      << title << "</text>\n"
      << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin << "\" y2=\""
      << height - margin << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\"" << height - margin
      << "\" stroke=\"black\"/>\n";
  char label[64];
  for (double v : {xmin, xmax}) {
    std::snprintf(label, sizeof label, "%.4g", v);
    out << "<text x=\"" << px(v) << "\" y=\"" << height - margin + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << label << "</text>\n";
  }
  for (double v : {ymin, ymax}) {
    std::snprintf(label, sizeof label, "%.4g", v);
    out << "<text x=\"" << margin - 6 << "\" y=\"" << py(v) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << label << "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& ser = series[s];
    const char* colour = colours[s % 6];
    if (ser.lower.size() == x.size() && ser.upper.size() == x.size()) {
      out << "<polygon fill=\"" << colour << "\" fill-opacity=\"0.2\" points=\"";
      for (std::size_t k = 0; k < x.size(); ++k) out << px(x[k]) << ',' << py(ser.upper[k]) << ' ';
      for (std::size_t k = x.size(); k-- > 0;) out << px(x[k]) << ',' << py(ser.lower[k]) << ' ';
      out << "\"/>\n";
    }
    out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < x.size() && k < ser.y.size(); ++k) out << px(x[k]) << ',' << py(ser.y[k]) << ' ';
    out << "\"/>\n";
    out << "<text x=\"" << width - margin << "\" y=\"" << margin + 14 * static_cast<double>(s)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << colour << "\">"
        << ser.label << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace sapc
