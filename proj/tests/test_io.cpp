#include "doctest.h"

#include "sapc/io.hpp"
#include "sapc/simulate.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace sapc;
using nlohmann::json;

namespace {

RawSeries parse(const std::string& text) {
  std::istringstream in(text);
  return read_raw_series(in);
}

GraphReport graph_from(const std::string& text, const std::vector<std::string>& strata) {
  std::istringstream in(text);
  return load_graph(in, strata);
}

std::vector<std::vector<std::string>> sorted(std::vector<std::vector<std::string>> v) {
  for (auto& c : v) std::sort(c.begin(), c.end());
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST_CASE("grid bounds") {
  const GridBounds b{0, 85, 1925, 2015, 5};
  const GridSpec g = b.grid();
  CHECK(g.ages() == 17);
  CHECK(g.periods() == 18);
  CHECK(g.cohorts() == 34);

  GridBounds bad{0, 80, 1925, 2015, 3};
  try {
    bad.validate();
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "grid.width");
    CHECK(std::string(e.what()).find("grid.width") != std::string::npos);
  }
  CHECK_THROWS_AS((GridBounds{0, 85, 2015, 1925, 5}.validate()), ConfigError);
}

TEST_CASE("raw series parsing and validation") {
  const RawSeries r = parse("year,age,stratum,deaths,exposure\n1927,3,A,2,100\n1930,0,B,0,0\n");
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[0].stratum == "A");
  CHECK(r.rows[0].age == 3);
  CHECK(r.rows[0].year == 1927);
  CHECK(r.rows[0].deaths == 2.0);
  CHECK(r.rows[0].exposure == 100.0);

  CHECK_THROWS(parse("stratum,age,year,deaths,exposure\nA,3,1927,2,100\nA,3,1927,1,50\n"));
  CHECK_THROWS(parse("stratum,age,year,deaths,exposure\nA,3,1927,2.5,100\n"));
  CHECK_THROWS(parse("stratum,age,year,deaths,exposure\nA,3,1927,-1,100\n"));
  CHECK_THROWS(parse("stratum,age,year,deaths,exposure\nA,3,1927,1,-100\n"));
  CHECK_THROWS(parse("stratum,age,year,deaths,exposure\nA,3,1927,4,0\n"));
  CHECK_THROWS(parse("stratum,age,year,deaths\nA,3,1927,4\n"));
}

TEST_CASE("aggregation into bins") {
  const GridBounds b{0, 15, 1925, 1940, 5};
  const AggregateResult one = aggregate(parse("stratum,age,year,deaths,exposure\nA,3,1927,2,100\n"), b);
  const MortalityDataset& d = one.data;
  CHECK(d.grid.ages() == 3);
  CHECK(d.first_age == 0);
  CHECK(d.first_year == 1925);
  const int c = d.position(0, 1, 1);
  CHECK(d.observed[c] == 1);
  CHECK(d.counts(c) == 2.0);
  CHECK(d.exposure(c) == 100.0);
  CHECK(d.observed_count() == 1);

  const AggregateResult two = aggregate(
      parse("stratum,age,year,deaths,exposure\nA,3,1927,2,100.25\nA,4,1925,5,7.5\nA,15,1930,1,10\nA,2,1924,1,10\n"), b);
  CHECK(two.data.counts(c) == 7.0);
  CHECK(two.data.exposure(c) == 107.75);
  CHECK(two.dropped_rows == 2);

  // stratum order follows the list; unlisted strata are dropped
  const AggregateResult listed =
      aggregate(parse("stratum,age,year,deaths,exposure\nA,3,1927,2,100\nB,3,1927,1,100\nC,0,1925,1,1\n"), b,
                {"B", "A"});
  CHECK(listed.data.strata == std::vector<std::string>{"B", "A"});
  CHECK(listed.data.counts(listed.data.position(0, 1, 1)) == 1.0);
  CHECK(listed.dropped_rows == 1);
}

TEST_CASE("partial coverage is flagged") {
  const GridBounds b{0, 15, 2000, 2015, 5};
  std::ostringstream csv;
  csv << "stratum,age,year,deaths,exposure\n";
  for (int a = 0; a < 15; ++a)
    for (int y = 2000; y < 2015; ++y)
      if (!(a < 5 && y < 2005 && a == 2)) csv << "S," << a << ',' << y << ",1,10\n";
  const AggregateResult r = aggregate(parse(csv.str()), b);
  CHECK(r.partial_cells == 1);
  CHECK(r.data.partial[r.data.position(0, 1, 1)] == 1);
  CHECK(r.data.partial[r.data.position(0, 2, 2)] == 0);
  CHECK(r.data.counts(r.data.position(0, 1, 1)) == 20.0);
  CHECK(r.data.counts(r.data.position(0, 2, 1)) == 25.0);
}

TEST_CASE("aggregation is additive") {
  const GridBounds b{0, 20, 1950, 1970, 5};
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> deaths(0, 40);
  std::uniform_real_distribution<double> expo(50.0, 500.0);
  RawSeries all, left, right;
  for (const char* s : {"X", "Y"})
    for (int a = 0; a < 20; ++a)
      for (int y = 1950; y < 1970; ++y) {
        const RawRow row{s, a, y, static_cast<double>(deaths(rng)), std::round(expo(rng) * 4) / 4};
        all.rows.push_back(row);
        ((a + y) % 3 == 0 ? left : right).rows.push_back(row);
      }
  const MortalityDataset whole = aggregate(all, b).data;
  const MortalityDataset l = aggregate(left, b, {"X", "Y"}).data;
  const MortalityDataset r = aggregate(right, b, {"X", "Y"}).data;
  CHECK(whole.counts == l.counts + r.counts);
  // quarter-unit exposures keep the sums exact
  CHECK(whole.exposure == l.exposure + r.exposure);
}

TEST_CASE("adjacency graphs") {
  const std::vector<std::string> four{"1", "2", "3", "4"};
  const GraphReport two = graph_from("from,to\n1,2\n3,4\n", four);
  CHECK(two.components_before.size() == 2);
  CHECK(two.components_after.size() == 2);
  CHECK(two.augmented_edges.empty());

  const std::vector<std::string> europe{"UK", "Ireland", "Sweden", "Finland", "Greece", "Bulgaria",
                                        "France", "Germany", "Spain", "Italy"};
  const std::string edges =
      "from,to,augmented\n"
      "UK,Ireland,false\nSweden,Finland,false\nGreece,Bulgaria,false\n"
      "France,Germany,false\nFrance,Spain,false\nFrance,Italy,false\n"
      "UK,France,true\nSweden,Germany,true\nGreece,Italy,true\n";
  const GraphReport rep = graph_from(edges, europe);
  CHECK(rep.components_before.size() == 4);
  CHECK(rep.components_after.size() == 1);
  CHECK(rep.augmented_edges.size() == 3);
  CHECK(rep.graph.component_count() == 1);
  int pairs = 0;
  for (const auto& comp : rep.components_before) pairs += comp.size() == 2;
  CHECK(pairs == 3);

  // edge order does not matter
  std::istringstream in(edges);
  std::string header, line;
  std::getline(in, header);
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  std::mt19937_64 rng(2);
  for (int k = 0; k < 5; ++k) {
    std::shuffle(lines.begin(), lines.end(), rng);
    std::string text = header + "\n";
    for (const auto& l : lines) text += l + "\n";
    const GraphReport p = graph_from(text, europe);
    CHECK(p.graph.adjacency() == rep.graph.adjacency());
    CHECK(sorted(p.components_before) == sorted(rep.components_before));
  }
  // reversed endpoints give the same symmetric graph
  CHECK(graph_from("from,to\n2,1\n4,3\n", four).graph.adjacency() == two.graph.adjacency());

  CHECK_THROWS(graph_from("from,to\n1,1\n", four));
  CHECK_THROWS(graph_from("from,to\n1,9\n", four));
}

TEST_CASE("run configuration") {
  const RunConfig def = parse_run_config(json::object());
  CHECK(def.bounds.grid().ages() == 17);
  CHECK(def.model.id() == Pattern::M4);

  const json j = json::parse(R"({
    "grid": {"age_min": 0, "age_max": 60, "year_min": 1950, "year_max": 2000, "width": 10},
    "strata": ["a", "b", "c"],
    "models": ["M1", "M4"],
    "structures": ["independent", "exchangeable"],
    "seed": 99,
    "priors": {"epsilon": {"age": 0.1}}
  })");
  const RunConfig c = parse_run_config(j);
  CHECK(c.bounds.grid().ages() == 6);
  CHECK(c.bounds.grid().periods() == 5);
  CHECK(c.strata.size() == 3);
  CHECK(c.models.size() == 2);
  CHECK(c.seed == 99);
  CHECK(c.priors.epsilon[index(Block::age)] == 0.1);
  CHECK(to_json(parse_run_config(to_json(c))) == to_json(c));
  CHECK(config_hash(to_json(c)) == config_hash(to_json(parse_run_config(to_json(c)))));
  CHECK(config_hash(to_json(c)) != config_hash(to_json(def)));
  CHECK(config_hash(to_json(c)).size() == 16);

  CHECK_THROWS_AS(parse_run_config(json::parse(R"({"grid": {"widht": 5}})")), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json::parse(R"({"grid": {"age_max": 80, "width": 3}})")), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json::parse(R"({"models": ["M7"]})")), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json::parse(R"({"seed": "x"})")), ConfigError);
}

TEST_CASE("numbers round-trip through CSV") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  std::ostringstream out;
  out << "v\n";
  std::vector<double> values{0.1, 1.0 / 3.0, 1e-300, -2.5e17, 5e-324, 123456789.123456789};
  for (int k = 0; k < 500; ++k) values.push_back(std::exp(u(rng)) * (k % 2 ? 1 : -1));
  for (double v : values) out << format_number(v) << '\n';
  std::istringstream in(out.str());
  const CsvTable t = read_csv(in);
  REQUIRE(t.rows.size() == values.size());
  CHECK_THROWS(parse_number("1e999"));
  CHECK_THROWS(parse_number("3x"));
  CHECK_THROWS(parse_number(""));
  for (std::size_t k = 0; k < values.size(); ++k) CHECK(parse_number(t.rows[k][0]) == values[k]);

  // datasets survive a write/read/aggregate cycle exactly
  const GridSpec g(3, 4);
  const LatentModel m = assemble_model(g, 2, SharingPattern(Pattern::M3), StructureKind::independent,
                                       default_baseline(g));
  SyntheticData sim = simulate(m, default_simulation_hyperparameters(m), Eigen::VectorXd::Constant(1, 1234.5678), 3);
  sim.data.first_age = 20;
  sim.data.first_year = 1990;
  std::ostringstream raw;
  write_raw_series(raw, raw_series_from_dataset(sim.data));
  const GridBounds b{20, 35, 1990, 2010, 5};
  const MortalityDataset back = aggregate(parse(raw.str()), b).data;
  CHECK(back.counts == sim.data.counts);
  CHECK(back.exposure == sim.data.exposure);
  CHECK(back.strata == sim.data.strata);
}

TEST_CASE("command line rejects an invalid config") {
  const auto dir = std::filesystem::temp_directory_path() / "sapc_io_cli";
  std::filesystem::create_directories(dir);
  const auto cfg = dir / "bad.json";
  std::ofstream(cfg) << R"({"grid": {"age_min": 0, "age_max": 80, "width": 3}})";
  const std::string cmd = std::string(SAPC_CLI) + " simulate --config " + cfg.string() + " --out " +
                          (dir / "out").string() + " 2>" + (dir / "err.txt").string();
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 1);
  std::ifstream err(dir / "err.txt");
  const std::string msg((std::istreambuf_iterator<char>(err)), std::istreambuf_iterator<char>());
  CHECK(msg.find("grid.width") != std::string::npos);
  std::filesystem::remove_all(dir);
}
