// File formats and run configuration: long-format death/exposure tables,
// aggregation onto the APC grid, adjacency graphs, JSON run configs, and
// CSV/SVG emitters.
#pragma once

#include "sapc/selection.hpp"

#include "json.hpp"

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sapc {

/// Invalid run configuration; `field` is the dotted path of the culprit.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument("config field '" + field + "': " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct RawRow {
  std::string stratum;
  int age = 0;
  int year = 0;
  double deaths = 0.0;
  double exposure = 0.0;
};

struct RawSeries {
  std::vector<RawRow> rows;

  /// Rejects duplicate (stratum, age, year) keys, negative or fractional
  /// deaths, negative exposure, and deaths without exposure.
  void validate() const;
};

/// Headered CSV with columns stratum,age,year,deaths,exposure (any order).
RawSeries read_raw_series(std::istream& in);
RawSeries read_raw_series(const std::string& path);
void write_raw_series(std::ostream& out, const RawSeries& raw);

/// One row per observed cell, keyed by the first age and year of its bin.
RawSeries raw_series_from_dataset(const MortalityDataset& data);

/// Half-open bins [min, max) of equal width on both axes.
struct GridBounds {
  int age_min = 0;
  int age_max = 85;
  int year_min = 1925;
  int year_max = 2015;
  int width = 5;

  GridSpec grid() const;
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

struct AggregateResult {
  MortalityDataset data;
  int dropped_rows = 0;  // outside the bounds or of an unlisted stratum
  int partial_cells = 0;
};

/// Sums deaths and exposures into bins. Cells without rows are unobserved;
/// cells built from fewer rows than the best-covered cell are flagged
/// partial. Strata follow `strata` when given, else first appearance.
AggregateResult aggregate(const RawSeries& raw, const GridBounds& bounds, const std::vector<std::string>& strata = {});

struct GraphReport {
  AdjacencyGraph graph;
  std::vector<std::vector<std::string>> components_before;  // without augmented edges
  std::vector<std::vector<std::string>> components_after;
  std::vector<std::pair<std::string, std::string>> augmented_edges;
};

/// Headered CSV edge list with columns from,to and an optional boolean
/// `augmented`. Endpoints are stratum names.
GraphReport load_graph(std::istream& in, const std::vector<std::string>& strata);
GraphReport load_graph(const std::string& path, const std::vector<std::string>& strata);

struct RunConfig {
  GridBounds bounds;
  std::vector<std::string> strata;
  std::optional<BaselineSpec> baseline;
  PriorConfig priors;
  std::vector<SharingPattern> models;
  std::vector<StructureKind> structures{StructureKind::independent, StructureKind::exchangeable, StructureKind::bym2};
  SharingPattern model{Pattern::M4};
  StructureKind structure = StructureKind::exchangeable;
  std::uint64_t seed = 1;
  OptimizeOptions optimize;
  int posterior_samples = 1000;
  bool axial_integration = false;
  int workers = 1;
  std::string output = "out";
  int prior_sims = 1000;
  std::string hindcast_stratum;  // empty: the first stratum
  int hindcast_periods = 3;
  std::string rr_reference;      // empty: the first stratum
  // simulate
  int sim_strata = 5;
  double sim_exposure = 1e5;
  double sim_rho = 0.5;
  std::array<std::optional<double>, 4> sim_tau;
};

/// Parses and validates; unknown keys are rejected so typos surface.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json to_json(const RunConfig& config);
/// FNV-1a of the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

/// Baseline for a grid: the configured one, else the default.
BaselineSpec resolve_baseline(const RunConfig& config, const GridSpec& grid);

/// Minimal CSV reader: header plus rows of raw fields. Quoting is not supported.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
};
CsvTable read_csv(std::istream& in);

/// Strict decimal parse of a whole field; subnormals are accepted.
double parse_number(const std::string& s);

/// Formats with 17 significant digits, so values round-trip exactly.
std::string format_number(double v);

struct SvgSeries {
  std::string label;
  std::vector<double> y;
  std::vector<double> lower;  // optional band
  std::vector<double> upper;
};

/// Line chart with optional uncertainty bands, for quick inspection.
void write_line_svg(const std::string& path, const std::string& title, const std::vector<double>& x,
                    const std::vector<SvgSeries>& series);

}  // namespace sapc
