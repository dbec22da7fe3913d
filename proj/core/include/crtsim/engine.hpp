#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "crtsim/census.hpp"
#include "crtsim/dgm.hpp"
#include "crtsim/estimators.hpp"
#include "crtsim/randomization.hpp"

namespace crtsim {

// ---------------------------------------------------------------------------
// Configuration

/// Replication counts and pool size for the two run profiles.
struct ScaleProfile {
  std::uint64_t pool_attempts;
  int n_reps_null;
  int n_reps_alt;

  static ScaleProfile desk() { return {50'000, 2'000, 500}; }
  static ScaleProfile full() { return {1'000'000, 10'000, 1'000}; }
};

/// Inputs of the closed-form comparison column.
struct FormulaParams {
  double icc_h = 0.048;
  double alpha = 0.05;
  double children_per_village = 14.0;
  int clusters_per_arm = 6;
  int n_clusters = 12;
};

struct StudyConfig {
  // Census source: a census CSV, or profiles (file or built-in) plus a seed.
  std::optional<std::filesystem::path> census_file;
  std::optional<std::filesystem::path> profiles_file;
  std::uint64_t census_seed = 1;

  std::uint64_t pool_attempts = ScaleProfile::full().pool_attempts;
  double pool_threshold = 0.2;

  std::vector<double> cer{0.55, 0.60, 0.65, 0.70, 0.75};
  std::vector<double> delta{0.0, 0.10, 0.15, 0.20};
  std::vector<int> n_per_arm{60, 70, 80, 90};
  std::vector<CoefficientSet> coef_sets{CoefficientSet::published(1), CoefficientSet::published(2),
                                        CoefficientSet::published(3)};
  std::vector<double> icc_v{0.24, 1.0 / 3.0};

  int n_reps_null = ScaleProfile::full().n_reps_null;
  int n_reps_alt = ScaleProfile::full().n_reps_alt;
  double critical_z = 1.695;
  std::uint64_t master_seed = 1;
  bool baseline_offset = true;
  std::filesystem::path output_dir = "results";

  FormulaParams formula;

  void apply(const ScaleProfile& scale);
  /// Throws ValidationError naming the offending field.
  void validate() const;
};

/// Parses a StudyConfig JSON file. Errors name the JSON path of the field
/// (e.g. `$.grid.cer[2]`). Relative paths resolve against the file's
/// directory.
StudyConfig load_study_config(const std::filesystem::path& path);

/// Census described by the config (loaded or generated).
Census make_census(const StudyConfig& config);

// ---------------------------------------------------------------------------
// Grid and scenarios

/// Cartesian product of the (deduplicated, sorted) grids in lexicographic
/// order of (cer, delta, n_per_arm, coefficient set, icc_v). Null
/// scenarios get n_reps_null replicates, the rest n_reps_alt.
std::vector<Scenario> expand_grid(const StudyConfig& config);

/// Calibrations keyed by (cer, delta, coefficients, icc); thread-safe.
class CalibrationCache {
 public:
  explicit CalibrationCache(const Census& census) : census_(census) {}
  CalibratedIntercepts get(const Scenario& scenario);
  std::size_t size() const;

 private:
  using Key = std::tuple<double, double, double, double, double, bool>;
  const Census& census_;
  mutable std::mutex mutex_;
  std::map<Key, CalibratedIntercepts> cache_;
};

struct McError {
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// sqrt(rate (1 - rate) / n_reps) with a 1.96-SE interval clamped to [0, 1].
McError mcse(double rate, long long n_reps);

struct MethodSummary {
  Method method = Method::kNaive;
  long long n_reps = 0;
  long long n_reject = 0;
  long long n_fail = 0;  // fits that did not converge (counted as non-rejections)
  double rate = 0.0;
  McError mc;
  double fail_rate = 0.0;
};

/// Identifies a scenario in result files.
struct ScenarioKey {
  std::size_t id = 0;
  double cer = 0.0;
  double delta = 0.0;
  int n_per_arm = 0;
  std::string coef_set;
  double icc_v = 0.0;

  static ScenarioKey of(const Scenario& s);
  friend bool operator==(const ScenarioKey&, const ScenarioKey&) = default;
};

struct ScenarioSummary {
  ScenarioKey key;
  std::array<MethodSummary, 3> methods;  // in kMethods order

  const MethodSummary& of(Method m) const;
};

/// Per-replicate decisions, one flag pair per method in kMethods order.
struct ReplicateOutcome {
  std::array<bool, 3> reject{};
  std::array<bool, 3> converged{};
};

/// One replicate: pool draw, follow-up simulation, all three analyses.
ReplicateOutcome run_replicate(const Scenario& scenario, const Census& census,
                               const ConstrainedPool& pool, const CalibratedIntercepts& calib,
                               int rep);

/// Runs scenario.n_reps replicates on `workers` threads. Replicate r draws
/// from substream (seed, scenario.id, r, draw) and simulates from
/// (seed, scenario.id, r, dgm), so the summary is schedule-independent.
ScenarioSummary run_scenario(const Scenario& scenario, const Census& census,
                             const ConstrainedPool& pool, CalibrationCache& calib_cache,
                             unsigned workers = 0);

// ---------------------------------------------------------------------------
// Result files

inline constexpr const char* kResultsHeader =
    "scenario_id,cer,delta,n_per_arm,coef_set,icc_v,method,n_reps,n_reject,rate,mcse,ci_low,"
    "ci_high,fail_rate";

/// Appends the three method rows of `summary` (no header).
void append_results(std::ostream& out, const ScenarioSummary& summary);
std::vector<ScenarioSummary> read_results(const std::filesystem::path& path);
std::string summaries_json(const std::vector<ScenarioSummary>& summaries);

struct ComparisonRow {
  std::string section;  // "type1" or "power"
  ScenarioKey key;
  double beta = 0.0;
  double naive = 0.0;
  double quasibinomial = 0.0;
  double formula_power = 0.0;
  double formula_m = 0.0;
};

struct ClosedFormRow {
  int n_per_arm = 0;
  double cer = 0.0;
  double delta = 0.0;
  double m = 0.0;
  double power = 0.0;
};

/// Closed-form power for every (n_per_arm, cer, delta) present in
/// `summaries`.
std::vector<ClosedFormRow> closed_form_rows(const std::vector<ScenarioSummary>& summaries,
                                            const FormulaParams& params);

struct ComparisonReport {
  std::vector<ComparisonRow> rows;
  std::vector<ScenarioKey> unmatched;  // summaries with no closed-form row
};

/// Joins simulated rejection rates with closed-form power on (n_per_arm,
/// cer, delta). Null scenarios form the "type1" section.
ComparisonReport compare_report(const std::vector<ScenarioSummary>& summaries,
                                const std::vector<ClosedFormRow>& closed_form);

inline constexpr const char* kComparisonHeader =
    "section,n_per_arm,cer,delta,coef_set,icc_v,beta,naive,quasibinomial,formula_m,formula_power";
void write_comparison(const ComparisonReport& report, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Whole study

struct StudyOptions {
  unsigned workers = 0;
  /// Stop after this many newly completed scenarios (resume testing).
  std::optional<std::size_t> max_new_scenarios;
  std::function<void(const ScenarioSummary&, std::size_t done, std::size_t total)> on_scenario;
};

struct StudyResult {
  std::vector<ScenarioSummary> summaries;
  std::size_t resumed = 0;  // scenarios found complete on disk
  bool complete = false;
};

/// Runs every scenario of `config`, writing into config.output_dir:
/// results.csv (appended per scenario; an existing file is resumed),
/// census.csv, pool_n<N>.csv per villages-per-arm value, and on completion
/// summary.json and comparison.csv.
StudyResult run_study(const StudyConfig& config, const StudyOptions& options = {});

}  // namespace crtsim
