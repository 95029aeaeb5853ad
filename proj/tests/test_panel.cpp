#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "msc/errors.hpp"
#include "msc/panel.hpp"

namespace fs = std::filesystem;
using namespace msc;

namespace {

fs::path temp_file(const std::string& name, const std::string& body) {
  const fs::path dir = fs::temp_directory_path() / "msc_test_panel";
  fs::create_directories(dir);
  const fs::path p = dir / name;
  std::ofstream(p, std::ios::binary) << body;
  return p;
}

std::string error_of(const fs::path& p, std::int64_t marker) {
  try {
    ingest_csv(p, {}, marker);
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

const fs::path kFixtures = MSC_FIXTURE_DIR;

}  // namespace

TEST_CASE("smallest complete grid") {
  const auto p = temp_file("small.csv",
                           "unit,time,outcome,treated\n"
                           "B,1,4,0\nA,1,1,1\nB,2,5,0\nA,2,2,1\nA,3,3,1\nB,3,6,0\n");
  const PanelData panel = ingest_csv(p, {}, 2);
  CHECK(panel.treated_count() == 1);
  CHECK(panel.control_count() == 1);
  CHECK(panel.t0() == 2);
  CHECK(panel.t1() == 1);
  CHECK(panel.units() == std::vector<std::string>{"A", "B"});
  CHECK(panel.outcomes()(2, 0) == 3.0);
  CHECK(panel.outcomes()(0, 1) == 4.0);
}

TEST_CASE("missing cell names the unit and time") {
  const auto p = temp_file("missing.csv",
                           "unit,time,outcome,treated\n"
                           "A,1,1,1\nA,2,2,1\nA,3,3,1\nB,1,4,0\nB,2,5,0\n");
  CHECK_THROWS_AS(ingest_csv(p, {}, 2), IngestError);
  const std::string msg = error_of(p, 2);
  CHECK(msg.find("'B'") != std::string::npos);
  CHECK(msg.find("time 3") != std::string::npos);
}

TEST_CASE("non-numeric outcome reports the line") {
  const auto p = temp_file("nonnum.csv",
                           "unit,time,outcome,treated\n"
                           "A,1,1,1\nA,2,abc,1\nB,1,4,0\nB,2,5,0\n");
  CHECK_THROWS_AS(ingest_csv(p, {}, 1), ParseError);
  CHECK(error_of(p, 1).find("line 3") != std::string::npos);
}

TEST_CASE("inconsistent treated flag") {
  const auto p = temp_file("flag.csv",
                           "unit,time,outcome,treated\n"
                           "A,1,1,1\nA,2,2,0\nB,1,4,0\nB,2,5,0\n");
  CHECK_THROWS_AS(ingest_csv(p, {}, 1), ValidationError);
  CHECK(error_of(p, 1).find("'A'") != std::string::npos);
}

TEST_CASE("other ingestion failures") {
  SUBCASE("no control unit") {
    const auto p = temp_file("nocontrol.csv", "unit,time,outcome,treated\nA,1,1,1\nA,2,2,1\n");
    CHECK_THROWS_AS(ingest_csv(p, {}, 1), ValidationError);
  }
  SUBCASE("no pre-treatment period") {
    const auto p = temp_file("nopre.csv",
                             "unit,time,outcome,treated\nA,5,1,1\nB,5,2,0\n");
    CHECK_THROWS_AS(ingest_csv(p, {}, 4), ValidationError);
  }
  SUBCASE("duplicate row") {
    const auto p = temp_file("dup.csv",
                             "unit,time,outcome,treated\nA,1,1,1\nA,1,2,1\nB,1,2,0\n");
    CHECK_THROWS_AS(ingest_csv(p, {}, 1), IngestError);
  }
  SUBCASE("missing column") {
    const auto p = temp_file("nocol.csv", "unit,time,value,treated\nA,1,1,1\n");
    CHECK_THROWS_AS(ingest_csv(p, {}, 1), IngestError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(ingest_csv(kFixtures / "does_not_exist.csv", {}, 1), IngestError);
  }
}

TEST_CASE("custom column names, quoting and byte-order mark") {
  const auto p = temp_file("custom.csv",
                           "\xEF\xBB\xBF" "county,month,rate,sah\n"
                           "\"Cook, IL\",1,1.5,1\n\"Cook, IL\",2,2.5,1\n"
                           "Ada,1,3,0\nAda,2,4,0\n");
  CsvSchema schema{"county", "month", "rate", "sah"};
  const PanelData panel = ingest_csv(p, schema, 1);
  CHECK(panel.units() == std::vector<std::string>{"Cook, IL", "Ada"});
  CHECK(panel.outcomes()(1, 0) == 2.5);
}

TEST_CASE("split dimensions, copy semantics and partition") {
  const auto p = temp_file("split.csv",
                           "unit,time,outcome,treated\n"
                           "T,1,1,1\nT,2,2,1\nT,3,3,1\nT,4,4,1\n"
                           "C1,1,5,0\nC1,2,5,0\nC1,3,5,0\nC1,4,5,0\n"
                           "C2,1,7,0\nC2,2,8,0\nC2,3,9,0\nC2,4,10,0\n");
  const PanelData panel = ingest_csv(p, {}, 3);
  const DesignSplit s = split(panel);
  CHECK(s.y_pre.rows() == 3);
  CHECK(s.y_pre.cols() == 1);
  CHECK(s.x_pre.rows() == 3);
  CHECK(s.x_pre.cols() == 2);
  CHECK(s.y_post.rows() == 1);
  CHECK(s.x_post.cols() == 2);
  CHECK((s.x_pre.col(0).array() == 5.0).all());

  Matrix top(s.t0(), s.m() + s.n()), bottom(s.t1(), s.m() + s.n());
  top << s.y_pre, s.x_pre;
  bottom << s.y_post, s.x_post;
  Matrix full(s.t0() + s.t1(), s.m() + s.n());
  full << top, bottom;
  CHECK(full == panel.outcomes());
}

TEST_CASE("zero post periods still split") {
  const auto p = temp_file("nopost.csv",
                           "unit,time,outcome,treated\nA,1,1,1\nA,2,2,1\nB,1,3,0\nB,2,4,0\n");
  const PanelData panel = ingest_csv(p, {}, 10);
  CHECK(panel.t1() == 0);
  const DesignSplit s = split(panel);
  CHECK(s.y_post.rows() == 0);
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("ingestion is deterministic and round-trips through the writer") {
  const fs::path src = kFixtures / "county_small.csv";
  const auto marker = read_t0_marker(kFixtures / "county_small.json");
  REQUIRE(marker.has_value());
  const PanelData a = ingest_csv(src, {}, *marker);
  const PanelData b = ingest_csv(src, {}, *marker);
  CHECK(a.outcomes() == b.outcomes());
  CHECK(a.units() == b.units());

  const fs::path copy = fs::temp_directory_path() / "msc_test_panel" / "roundtrip.csv";
  write_panel_csv(a, copy);
  const PanelData c = ingest_csv(copy, {}, *marker);
  CHECK(c.outcomes() == a.outcomes());
  CHECK(c.units() == a.units());
  CHECK(c.times() == a.times());
}

TEST_CASE("county fixture at 1/100 scale") {
  const auto marker = read_t0_marker(kFixtures / "county_small.json");
  const PanelData panel = ingest_csv(kFixtures / "county_small.csv", {}, *marker);
  CHECK(panel.treated_count() == 27);
  CHECK(panel.control_count() == 4);
  CHECK(panel.t0() == 147);
  CHECK(panel.t1() == 1);
  // Treated-first, lexicographic within each group.
  const auto& u = panel.units();
  CHECK(std::is_sorted(u.begin(), u.begin() + 27));
  CHECK(std::is_sorted(u.begin() + 27, u.end()));
}

TEST_CASE("county-sized file: 3112 units with 438 controls") {
  const int m = 2674, n = 438, periods = 148;
  std::vector<std::string> units;
  std::vector<bool> treated;
  for (int k = 0; k < m + n; ++k) {
    char id[8];
    std::snprintf(id, sizeof id, "%05d", 1001 + 3 * k);
    units.emplace_back(id);
  }
  // Every seventh identifier is a control, so the groups interleave in the file.
  std::vector<std::string> t_units, c_units;
  for (int k = 0; k < m + n; ++k) {
    const bool control = k % 7 == 3 && static_cast<int>(c_units.size()) < n;
    (control ? c_units : t_units).push_back(units[k]);
  }
  REQUIRE(static_cast<int>(c_units.size()) == n);
  std::sort(c_units.begin(), c_units.end());
  std::vector<std::string> ordered = t_units;
  ordered.insert(ordered.end(), c_units.begin(), c_units.end());
  for (int k = 0; k < m + n; ++k) treated.push_back(k < m);
  std::vector<std::int64_t> times(periods);
  for (int t = 0; t < periods; ++t) times[t] = 24120 + t;
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> ud(2.0, 12.0);
  Matrix y(periods, m + n);
  for (Eigen::Index j = 0; j < y.cols(); ++j)
    for (Eigen::Index t = 0; t < y.rows(); ++t) y(t, j) = std::round(ud(gen) * 10) / 10;
  const PanelData built(ordered, times, y, treated, 147);
  const fs::path p = fs::temp_directory_path() / "msc_test_panel" / "county_full.csv";
  write_panel_csv(built, p);
  const PanelData panel = ingest_csv(p, {}, 24266);
  CHECK(panel.treated_count() == m);
  CHECK(panel.control_count() == n);
  CHECK(panel.t0() == 147);
  const DesignSplit s = split(panel);
  CHECK(s.m() == m);
  CHECK(s.n() == n);
  CHECK(panel.outcomes() == built.outcomes());
}

TEST_CASE("sidecar marker") {
  const auto with = temp_file("with.json", "{\"t0_marker\": 42}");
  const auto without = temp_file("without.json", "{\"other\": 1}");
  const auto bad = temp_file("bad.json", "{not json");
  CHECK(read_t0_marker(with) == 42);
  CHECK_FALSE(read_t0_marker(without).has_value());
  CHECK_THROWS_AS(read_t0_marker(bad), ParseError);
}

TEST_CASE("constructor rejects invariant violations") {
  Matrix y(2, 2);
  y << 1, 2, 3, 4;
  CHECK_THROWS_AS(PanelData({"A", "B"}, {1, 2}, y, {true, true}, 1), ValidationError);
  CHECK_THROWS_AS(PanelData({"A", "B"}, {2, 1}, y, {true, false}, 1), ValidationError);
  CHECK_THROWS_AS(PanelData({"A", "B"}, {1, 2}, y, {false, true}, 1), ValidationError);
  CHECK_THROWS_AS(PanelData({"A", "B"}, {1, 2}, y, {true, false}, 0), ValidationError);
  y(0, 0) = NAN;
  CHECK_THROWS_AS(PanelData({"A", "B"}, {1, 2}, y, {true, false}, 1), ValidationError);
}
