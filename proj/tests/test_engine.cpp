#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "crtsim/closed_form.hpp"
#include "crtsim/engine.hpp"
#include "crtsim/errors.hpp"
#include "fixtures.hpp"

using namespace crtsim;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path write_config(const fs::path& dir, const std::string& body) {
  const fs::path p = dir / "config.json";
  std::ofstream(p, std::ios::binary) << body;
  return p;
}

// Two scenarios (null and alternative) on the default census, sized for seconds.
StudyConfig small_study(const fs::path& out) {
  StudyConfig c;
  c.census_seed = 42;
  c.pool_attempts = 4000;
  c.cer = {0.70};
  c.delta = {0.0, 0.15};
  c.n_per_arm = {60};
  c.coef_sets = {CoefficientSet::published(2)};
  c.icc_v = {0.24};
  c.n_reps_null = 30;
  c.n_reps_alt = 20;
  c.master_seed = 7;
  c.output_dir = out;
  return c;
}

const ConstrainedPool& pool60() {
  static const ConstrainedPool pool = build_pool(testing::default_census(), 60, 4000, 0.2, 3, 1);
  return pool;
}

}  // namespace

TEST_CASE("mcse examples") {
  const McError half = mcse(0.5, 10000);
  CHECK(half.se == doctest::Approx(0.005).epsilon(1e-12));
  CHECK(half.ci_low == doctest::Approx(0.4902).epsilon(1e-12));
  CHECK(half.ci_high == doctest::Approx(0.5098).epsilon(1e-12));

  const McError row = mcse(0.083, 10000);
  CHECK(row.se == doctest::Approx(0.00276).epsilon(1e-3));
  CHECK(row.ci_low == doctest::Approx(0.0776).epsilon(1e-3));
  CHECK(row.ci_high == doctest::Approx(0.0884).epsilon(1e-3));
  // A published 0.083 with interval (0.077, 0.088) comes from an unrounded
  // rate just under 0.083.
  const McError unrounded = mcse(0.0828, 10000);
  CHECK(std::round(unrounded.ci_low * 1000) == 77);
  CHECK(std::round(unrounded.ci_high * 1000) == 88);

  const McError zero = mcse(0.0, 50);
  CHECK(zero.se == 0.0);
  CHECK(zero.ci_low == 0.0);
  CHECK(zero.ci_high == 0.0);

  const McError edge = mcse(0.01, 20);
  CHECK(edge.ci_low == 0.0);
  CHECK(mcse(0.99, 20).ci_high == 1.0);
  CHECK_THROWS_AS(mcse(0.5, 0), ValidationError);
}

TEST_CASE("mcse agrees with a bootstrap of the rejection indicator") {
  std::mt19937_64 gen(11);
  const int n = 1000;
  std::bernoulli_distribution coin(0.083);
  std::vector<int> x(n);
  int hits = 0;
  for (int& v : x) hits += v = coin(gen);
  const double rate = static_cast<double>(hits) / n;
  std::uniform_int_distribution<int> pick(0, n - 1);
  double s = 0, ss = 0;
  const int boots = 4000;
  for (int b = 0; b < boots; ++b) {
    int h = 0;
    for (int i = 0; i < n; ++i) h += x[static_cast<std::size_t>(pick(gen))];
    const double r = static_cast<double>(h) / n;
    s += r;
    ss += r * r;
  }
  const double boot_se = std::sqrt((ss - s * s / boots) / (boots - 1));
  CHECK(std::abs(boot_se / mcse(rate, n).se - 1.0) < 0.10);
}

TEST_CASE("grid expansion") {
  StudyConfig c;
  auto grid = expand_grid(c);
  CHECK(grid.size() == 5 * 4 * 4 * 3 * 2);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    CHECK(grid[i].id == i);
    CHECK(grid[i].n_reps == (grid[i].delta == 0.0 ? c.n_reps_null : c.n_reps_alt));
  }
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const auto& a = grid[i - 1];
    const auto& b = grid[i];
    CHECK(std::tie(a.cer, a.delta, a.n_per_arm) <= std::tie(b.cer, b.delta, b.n_per_arm));
  }

  StudyConfig dup = c;
  dup.cer = {0.7, 0.55, 0.7, 0.6, 0.65, 0.75, 0.55};
  dup.coef_sets.push_back(CoefficientSet::published(2));
  CHECK(expand_grid(dup).size() == grid.size());

  StudyConfig one = c;
  one.cer = {0.7};
  one.delta = {0.1};
  one.n_per_arm = {60};
  one.coef_sets = {CoefficientSet::published(2)};
  one.icc_v = {0.24};
  CHECK(expand_grid(one).size() == 1);
}

TEST_CASE("crossed coefficient grid gives 360 scenarios per cluster count") {
  const auto dir = testing::scratch("engine_crossed");
  const auto path = write_config(dir, R"({"grid": {"n_per_arm": [60], "coef_mode": "crossed"}})");
  const StudyConfig c = load_study_config(path);
  CHECK(c.coef_sets.size() == 9);
  CHECK(expand_grid(c).size() == 360);
}

TEST_CASE("config errors name the JSON path") {
  const auto dir = testing::scratch("engine_config_errors");
  auto message = [&](const std::string& body) -> std::string {
    try {
      load_study_config(write_config(dir, body));
    } catch (const ValidationError& e) {
      return e.what();
    }
    return "";
  };
  CHECK(message(R"({"grid": {"cer": [0.6, 0.7, 1.2]}})").find("$.grid.cer[2]") != std::string::npos);
  CHECK(message(R"({"grid": {"colour": 1}})").find("$.grid.colour") != std::string::npos);
  CHECK(message(R"({"n_reps_null": 0})").find("$.n_reps_null") != std::string::npos);
  CHECK(message(R"({"grid": {"n_per_arm": []}})").find("$.grid.n_per_arm") != std::string::npos);
  CHECK(message(R"({"grid": {"coef_sets": [4]}})").find("$.grid.coef_sets[0]") != std::string::npos);
  CHECK(message(R"({"scale": "huge"})").find("$.scale") != std::string::npos);
  CHECK(message(R"({"grid": {"cer": [0.9], "delta": [0.15]}})").find("$.grid.delta[0]") !=
        std::string::npos);
  CHECK(message("{not json").find("invalid JSON") != std::string::npos);
  CHECK_THROWS_AS(load_study_config(dir / "missing.json"), SchemaError);

  const StudyConfig desk = load_study_config(write_config(dir, R"({"scale": "desk"})"));
  CHECK(desk.pool_attempts == 50'000);
  CHECK(desk.n_reps_null == 2'000);
  CHECK(desk.n_reps_alt == 500);
  const StudyConfig full = load_study_config(write_config(dir, "{}"));
  CHECK(full.n_reps_null == 10'000);
  CHECK(full.n_reps_alt == 1'000);
}

TEST_CASE("replicate accounting and single-replicate rates") {
  const Census& census = testing::default_census();
  CalibrationCache cache(census);
  Scenario s;
  s.n_reps = 1;
  s.seed = 99;
  const ScenarioSummary one = run_scenario(s, census, pool60(), cache, 1);
  for (const auto& m : one.methods) {
    CHECK((m.rate == 0.0 || m.rate == 1.0));
    CHECK(m.n_reps == 1);
  }

  s.n_reps = 25;
  s.delta = 0.15;
  const ScenarioSummary many = run_scenario(s, census, pool60(), cache, 1);
  for (const auto& m : many.methods) {
    CHECK(m.n_reject <= m.n_reps - m.n_fail);
    CHECK(m.rate == doctest::Approx(static_cast<double>(m.n_reject) / m.n_reps));
    CHECK(m.fail_rate == doctest::Approx(static_cast<double>(m.n_fail) / m.n_reps));
    CHECK(m.mc.ci_low >= 0.0);
    CHECK(m.mc.ci_high <= 1.0);
  }
  CHECK(cache.size() == 2);

  // The summary is the fold of the individual replicates.
  const CalibratedIntercepts calib = cache.get(s);
  std::array<long long, 3> rejects{};
  for (int r = 0; r < s.n_reps; ++r) {
    const ReplicateOutcome o = run_replicate(s, census, pool60(), calib, r);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK((!o.reject[k] || o.converged[k]));
      rejects[k] += o.reject[k];
    }
  }
  for (std::size_t k = 0; k < 3; ++k) CHECK(many.methods[k].n_reject == rejects[k]);
}

TEST_CASE("scenario summaries do not depend on the worker count") {
  const Census& census = testing::default_census();
  CalibrationCache cache(census);
  Scenario s;
  s.n_reps = 24;
  s.delta = 0.1;
  s.seed = 5;
  std::ostringstream a, b;
  append_results(a, run_scenario(s, census, pool60(), cache, 1));
  append_results(b, run_scenario(s, census, pool60(), cache, 4));
  CHECK(a.str() == b.str());
}

TEST_CASE("results round trip") {
  const auto dir = testing::scratch("engine_roundtrip");
  const Census& census = testing::default_census();
  CalibrationCache cache(census);
  std::vector<ScenarioSummary> written;
  for (std::size_t id = 0; id < 2; ++id) {
    Scenario s;
    s.id = id;
    s.delta = id == 0 ? 0.0 : 0.15;
    s.n_reps = 6;
    s.seed = 3;
    written.push_back(run_scenario(s, census, pool60(), cache, 1));
  }
  {
    std::ofstream out(dir / "results.csv", std::ios::binary);
    out << kResultsHeader << '\n';
    for (const auto& s : written) append_results(out, s);
  }
  const auto back = read_results(dir / "results.csv");
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].key == written[i].key);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(back[i].methods[k].n_reject == written[i].methods[k].n_reject);
      CHECK(back[i].methods[k].n_fail == written[i].methods[k].n_fail);
    }
  }

  // A partial trailing block is dropped.
  std::string text = slurp(dir / "results.csv");
  text.erase(text.rfind('\n', text.size() - 2) + 1);
  std::ofstream(dir / "partial.csv", std::ios::binary) << text;
  CHECK(read_results(dir / "partial.csv").size() == 1);

  std::ofstream(dir / "bad.csv", std::ios::binary) << "scenario_id,cer\n1,2\n";
  CHECK_THROWS_AS(read_results(dir / "bad.csv"), ValidationError);
}

TEST_CASE("comparison report") {
  const ComparisonReport empty = compare_report({}, {});
  CHECK(empty.rows.empty());
  const auto dir = testing::scratch("engine_compare");
  write_comparison(empty, dir / "empty.csv");
  CHECK(slurp(dir / "empty.csv") == std::string(kComparisonHeader) + "\n");

  std::vector<ScenarioSummary> summaries;
  std::size_t id = 0;
  for (double delta : {0.15, 0.0}) {
    for (int n : {60, 70, 80, 90}) {
      ScenarioSummary s;
      s.key = {id++, 0.70, delta, n, "2", 0.24};
      for (std::size_t k = 0; k < 3; ++k) {
        s.methods[k].method = kMethods[k];
        s.methods[k].n_reps = 10;
      }
      summaries.push_back(s);
    }
  }
  const auto formula = closed_form_rows(summaries, FormulaParams{});
  const ComparisonReport report = compare_report(summaries, formula);
  REQUIRE(report.rows.size() == 8);
  CHECK(report.unmatched.empty());
  CHECK(report.rows.front().section == "type1");
  const double table[] = {0.794, 0.801, 0.805, 0.809};
  int k = 0;
  for (const auto& row : report.rows) {
    if (row.section != "power") continue;
    CHECK(std::abs(row.formula_power - table[k]) <= 0.001);
    CHECK(row.formula_m == doctest::Approx(cluster_size(60 + 10 * k)));
    ++k;
  }
  CHECK(k == 4);

  // Rows without a closed-form counterpart are reported, not fatal.
  const ComparisonReport partial = compare_report(summaries, {formula.front()});
  CHECK(partial.unmatched.size() + partial.rows.size() == summaries.size());
  CHECK_FALSE(partial.unmatched.empty());
}

TEST_CASE("study output is deterministic and resumable") {
  const auto root = testing::scratch("engine_study");
  const StudyConfig one = small_study(root / "one");
  const StudyResult r1 = run_study(one, {.workers = 1});
  CHECK(r1.complete);
  CHECK(r1.summaries.size() == 2);
  for (const char* f : {"results.csv", "census.csv", "pool_n60.csv", "summary.json", "comparison.csv"}) {
    CHECK(fs::exists(root / "one" / f));
  }

  const StudyConfig many = small_study(root / "many");
  run_study(many, {.workers = 3});
  for (const char* f : {"results.csv", "summary.json", "comparison.csv", "pool_n60.csv"}) {
    INFO(f);
    CHECK(slurp(root / "one" / f) == slurp(root / "many" / f));
  }

  const StudyConfig cut = small_study(root / "cut");
  StudyOptions stop;
  stop.workers = 2;
  stop.max_new_scenarios = 1;
  const StudyResult first = run_study(cut, stop);
  CHECK_FALSE(first.complete);
  CHECK_FALSE(fs::exists(root / "cut" / "summary.json"));
  // Simulate a crash midway through writing the second scenario.
  {
    std::ofstream out(root / "cut" / "results.csv", std::ios::binary | std::ios::app);
    out << "1,0.7,0.15,60,2,0.24,quasibinomial,20,3";
  }
  const StudyResult second = run_study(cut, {.workers = 1});
  CHECK(second.complete);
  CHECK(second.resumed == 1);
  for (const char* f : {"results.csv", "summary.json", "comparison.csv"}) {
    INFO(f);
    CHECK(slurp(root / "one" / f) == slurp(root / "cut" / f));
  }

  // A results file from a different grid is refused.
  StudyConfig other = small_study(root / "cut");
  other.cer = {0.6};
  CHECK_THROWS_AS(run_study(other), ValidationError);
}
