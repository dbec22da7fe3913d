#include "crtsim/engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "crtsim/closed_form.hpp"
#include "crtsim/errors.hpp"
#include "crtsim/format.hpp"
#include "crtsim/parallel.hpp"

namespace crtsim {
namespace {

constexpr std::size_t method_slot(Method m) {
  for (std::size_t i = 0; i < kMethods.size(); ++i) {
    if (kMethods[i] == m) return i;
  }
  return 0;
}

Method parse_method(const std::string& s, const std::string& where) {
  for (Method m : kMethods) {
    if (method_name(m) == s) return m;
  }
  throw SchemaError(where + ": unknown method '" + s + "'");
}

template <class T>
std::vector<T> sorted_unique(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

auto coef_order(const CoefficientSet& c) {
  // Published sets by index; custom sets after them, by value.
  const bool custom = c.pop_index == 0 || c.dist_index == 0;
  return std::make_tuple(custom, c.pop_index, c.dist_index, c.beta_pop, c.beta_dist);
}

}  // namespace

std::vector<Scenario> expand_grid(const StudyConfig& config) {
  config.validate();
  const auto cers = sorted_unique(config.cer);
  const auto deltas = sorted_unique(config.delta);
  const auto ns = sorted_unique(config.n_per_arm);
  const auto iccs = sorted_unique(config.icc_v);
  auto coefs = config.coef_sets;
  std::sort(coefs.begin(), coefs.end(),
            [](const auto& a, const auto& b) { return coef_order(a) < coef_order(b); });
  coefs.erase(std::unique(coefs.begin(), coefs.end(),
                          [](const auto& a, const auto& b) { return coef_order(a) == coef_order(b); }),
              coefs.end());

  std::vector<Scenario> out;
  for (double cer : cers) {
    for (double delta : deltas) {
      for (int n : ns) {
        for (const auto& coef : coefs) {
          for (double icc : iccs) {
            Scenario s;
            s.id = out.size();
            s.cer = cer;
            s.delta = delta;
            s.n_per_arm = n;
            s.coef = coef;
            s.icc_v = icc;
            s.n_reps = delta == 0.0 ? config.n_reps_null : config.n_reps_alt;
            s.critical_z = config.critical_z;
            s.seed = config.master_seed;
            s.baseline_offset = config.baseline_offset;
            out.push_back(s);
          }
        }
      }
    }
  }
  return out;
}

CalibratedIntercepts CalibrationCache::get(const Scenario& s) {
  const Key key{s.cer, s.delta, s.coef.beta_pop, s.coef.beta_dist, s.icc_v, s.baseline_offset};
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  const CalibratedIntercepts c = calibrate_intercepts(census_, s);
  std::lock_guard lock(mutex_);
  return cache_.emplace(key, c).first->second;
}

std::size_t CalibrationCache::size() const {
  std::lock_guard lock(mutex_);
  return cache_.size();
}

McError mcse(double rate, long long n_reps) {
  if (n_reps < 1) throw DomainError("mcse: n_reps must be >= 1");
  McError e;
  e.se = std::sqrt(rate * (1.0 - rate) / static_cast<double>(n_reps));
  e.ci_low = std::clamp(rate - 1.96 * e.se, 0.0, 1.0);
  e.ci_high = std::clamp(rate + 1.96 * e.se, 0.0, 1.0);
  return e;
}

ScenarioKey ScenarioKey::of(const Scenario& s) {
  return {s.id, s.cer, s.delta, s.n_per_arm, s.coef.label(), s.icc_v};
}

const MethodSummary& ScenarioSummary::of(Method m) const { return methods[method_slot(m)]; }

ReplicateOutcome run_replicate(const Scenario& scenario, const Census& census,
                               const ConstrainedPool& pool, const CalibratedIntercepts& calib,
                               int rep) {
  const auto r = static_cast<std::uint64_t>(rep);
  Stream draw_rng = Stream::derive({scenario.seed, scenario.id, r, tag(Purpose::kDraw)});
  Stream dgm_rng = Stream::derive({scenario.seed, scenario.id, r, tag(Purpose::kDgm)});
  const RandomizationDraw& draw = sample_from_pool(pool, draw_rng);
  const auto followup = simulate_followup(census, draw, calib, scenario, dgm_rng);
  const auto data = AnalysisDataset::from_followup(census, followup);

  ReplicateOutcome out;
  for (std::size_t k = 0; k < kMethods.size(); ++k) {
    try {
      const TestResult t = run_method(kMethods[k], data, scenario.critical_z);
      out.reject[k] = t.reject;
      out.converged[k] = t.converged;
    } catch (const ComputeError&) {
      out.reject[k] = false;
      out.converged[k] = false;
    }
  }
  return out;
}

ScenarioSummary run_scenario(const Scenario& scenario, const Census& census,
                             const ConstrainedPool& pool, CalibrationCache& calib_cache,
                             unsigned workers) {
  scenario.validate();
  if (pool.n_per_arm != scenario.n_per_arm) {
    throw ValidationError("pool was built for " + std::to_string(pool.n_per_arm) +
                          " villages per arm; scenario needs " +
                          std::to_string(scenario.n_per_arm));
  }
  const CalibratedIntercepts calib = calib_cache.get(scenario);

  std::vector<ReplicateOutcome> outcomes(static_cast<std::size_t>(scenario.n_reps));
  parallel_for(outcomes.size(), workers, [&](std::size_t rep) {
    outcomes[rep] = run_replicate(scenario, census, pool, calib, static_cast<int>(rep));
  });

  ScenarioSummary summary;
  summary.key = ScenarioKey::of(scenario);
  for (std::size_t k = 0; k < kMethods.size(); ++k) {
    MethodSummary& m = summary.methods[k];
    m.method = kMethods[k];
    m.n_reps = scenario.n_reps;
    for (const auto& o : outcomes) {
      m.n_reject += o.reject[k];
      m.n_fail += !o.converged[k];
    }
    m.rate = static_cast<double>(m.n_reject) / static_cast<double>(m.n_reps);
    m.mc = mcse(m.rate, m.n_reps);
    m.fail_rate = static_cast<double>(m.n_fail) / static_cast<double>(m.n_reps);
  }
  return summary;
}

void append_results(std::ostream& out, const ScenarioSummary& s) {
  for (const auto& m : s.methods) {
    out << s.key.id << ',' << format_double(s.key.cer) << ',' << format_double(s.key.delta) << ','
        << s.key.n_per_arm << ',' << s.key.coef_set << ',' << format_double(s.key.icc_v) << ','
        << method_name(m.method) << ',' << m.n_reps << ',' << m.n_reject << ','
        << format_double(m.rate) << ',' << format_double(m.mc.se) << ','
        << format_double(m.mc.ci_low) << ',' << format_double(m.mc.ci_high) << ','
        << format_double(m.fail_rate) << '\n';
  }
}

std::vector<ScenarioSummary> read_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open results file " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kResultsHeader) throw SchemaError(path.string() + ": unexpected results header");

  std::vector<ScenarioSummary> out;
  std::vector<int> filled;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (in.eof()) break;  // no newline: a torn write, dropped with its block
    if (line.empty() || line == "\r") continue;
    const std::string where = path.filename().string() + " row " + std::to_string(row);
    const auto f = split_csv(line);
    if (f.size() != 14) throw SchemaError(where + ": expected 14 fields");
    ScenarioKey key;
    key.id = static_cast<std::size_t>(parse_int(f[0], where + " scenario_id"));
    key.cer = parse_double(f[1], where + " cer");
    key.delta = parse_double(f[2], where + " delta");
    key.n_per_arm = static_cast<int>(parse_int(f[3], where + " n_per_arm"));
    key.coef_set = f[4];
    key.icc_v = parse_double(f[5], where + " icc_v");
    MethodSummary m;
    m.method = parse_method(f[6], where);
    m.n_reps = parse_int(f[7], where + " n_reps");
    m.n_reject = parse_int(f[8], where + " n_reject");
    m.rate = parse_double(f[9], where + " rate");
    m.mc.se = parse_double(f[10], where + " mcse");
    m.mc.ci_low = parse_double(f[11], where + " ci_low");
    m.mc.ci_high = parse_double(f[12], where + " ci_high");
    m.fail_rate = parse_double(f[13], where + " fail_rate");
    m.n_fail = std::llround(m.fail_rate * static_cast<double>(m.n_reps));
    if (m.n_reject > m.n_reps || m.n_reject < 0) throw SchemaError(where + ": n_reject outside [0, n_reps]");

    if (out.empty() || !(out.back().key == key) || filled.back() == 7) {
      out.push_back({});
      out.back().key = key;
      filled.push_back(0);
    }
    const std::size_t slot = method_slot(m.method);
    if (filled.back() & (1 << slot)) throw SchemaError(where + ": duplicate method row");
    filled.back() |= 1 << slot;
    out.back().methods[slot] = m;
  }
  // Only complete scenarios count; a partial trailing block is dropped.
  while (!filled.empty() && filled.back() != 7) {
    filled.pop_back();
    out.pop_back();
  }
  for (std::size_t i = 0; i < filled.size(); ++i) {
    if (filled[i] != 7) {
      throw SchemaError(path.string() + ": scenario " + std::to_string(out[i].key.id) +
                        " is missing method rows");
    }
  }
  return out;
}

std::string summaries_json(const std::vector<ScenarioSummary>& summaries) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::array();
  for (const auto& s : summaries) {
    nlohmann::ordered_json methods = nlohmann::ordered_json::object();
    for (const auto& m : s.methods) {
      methods[std::string(method_name(m.method))] = {
          {"n_reps", m.n_reps},       {"n_reject", m.n_reject},   {"rate", m.rate},
          {"mcse", m.mc.se},          {"ci_low", m.mc.ci_low},    {"ci_high", m.mc.ci_high},
          {"fail_rate", m.fail_rate}};
    }
    doc.push_back({{"scenario_id", s.key.id},
                   {"cer", s.key.cer},
                   {"delta", s.key.delta},
                   {"n_per_arm", s.key.n_per_arm},
                   {"coef_set", s.key.coef_set},
                   {"icc_v", s.key.icc_v},
                   {"methods", methods}});
  }
  return doc.dump(2) + "\n";
}

std::vector<ClosedFormRow> closed_form_rows(const std::vector<ScenarioSummary>& summaries,
                                            const FormulaParams& params) {
  std::set<std::tuple<int, double, double>> keys;
  for (const auto& s : summaries) keys.emplace(s.key.n_per_arm, s.key.cer, s.key.delta);
  std::vector<ClosedFormRow> out;
  for (const auto& [n, cer, delta] : keys) {
    if (!(cer + delta < 1.0)) continue;
    PowerInputs in;
    in.m = cluster_size(n, params.children_per_village, params.n_clusters);
    in.c = params.clusters_per_arm;
    in.pi0 = cer;
    in.pi1 = cer + delta;
    in.icc = params.icc_h;
    in.alpha = params.alpha;
    out.push_back({n, cer, delta, in.m, power(in)});
  }
  return out;
}

ComparisonReport compare_report(const std::vector<ScenarioSummary>& summaries,
                                 const std::vector<ClosedFormRow>& closed_form) {
  ComparisonReport report;
  for (const auto& s : summaries) {
    auto it = std::find_if(closed_form.begin(), closed_form.end(), [&](const ClosedFormRow& r) {
      return r.n_per_arm == s.key.n_per_arm && r.cer == s.key.cer && r.delta == s.key.delta;
    });
    if (it == closed_form.end()) {
      report.unmatched.push_back(s.key);
      continue;
    }
    ComparisonRow row;
    row.section = s.key.delta == 0.0 ? "type1" : "power";
    row.key = s.key;
    row.beta = s.of(Method::kBeta).rate;
    row.naive = s.of(Method::kNaive).rate;
    row.quasibinomial = s.of(Method::kQuasiBinomial).rate;
    row.formula_power = it->power;
    row.formula_m = it->m;
    report.rows.push_back(row);
  }
  std::stable_sort(report.rows.begin(), report.rows.end(), [](const auto& a, const auto& b) {
    return std::tie(b.section, a.key.id) < std::tie(a.section, b.key.id);  // type1 first
  });
  return report;
}

void write_comparison(const ComparisonReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << kComparisonHeader << '\n';
  for (const auto& r : report.rows) {
    out << r.section << ',' << r.key.n_per_arm << ',' << format_double(r.key.cer) << ','
        << format_double(r.key.delta) << ',' << r.key.coef_set << ',' << format_double(r.key.icc_v)
        << ',' << format_double(r.beta) << ',' << format_double(r.naive) << ','
        << format_double(r.quasibinomial) << ',' << format_double(r.formula_m) << ','
        << format_double(r.formula_power) << '\n';
  }
}

StudyResult run_study(const StudyConfig& config, const StudyOptions& options) {
  config.validate();
  const Census census = make_census(config);
  census.require_full_design();
  const auto scenarios = expand_grid(config);

  std::filesystem::create_directories(config.output_dir);
  write_census(census, config.output_dir / "census.csv");

  const auto results_path = config.output_dir / "results.csv";
  StudyResult result;
  if (std::filesystem::exists(results_path)) {
    result.summaries = read_results(results_path);
    for (const auto& s : result.summaries) {
      if (s.key.id >= scenarios.size() || !(ScenarioKey::of(scenarios[s.key.id]) == s.key)) {
        throw ValidationError(results_path.string() + " holds scenario " + std::to_string(s.key.id) +
                              " that does not match this config; use a fresh output_dir");
      }
    }
    result.resumed = result.summaries.size();
    // Rewrite without any partial trailing block before appending.
    std::ofstream rewrite(results_path, std::ios::binary | std::ios::trunc);
    rewrite << kResultsHeader << '\n';
    for (const auto& s : result.summaries) append_results(rewrite, s);
  } else {
    std::ofstream fresh(results_path, std::ios::binary);
    if (!fresh) throw ValidationError("cannot write " + results_path.string());
    fresh << kResultsHeader << '\n';
  }

  std::set<std::size_t> done;
  for (const auto& s : result.summaries) done.insert(s.key.id);

  std::map<int, ConstrainedPool> pools;
  auto pool_for = [&](int n) -> const ConstrainedPool& {
    auto it = pools.find(n);
    if (it != pools.end()) return it->second;
    const std::uint64_t seed = mix64(config.master_seed ^ mix64(tag(Purpose::kPool) + static_cast<std::uint64_t>(n)));
    ConstrainedPool pool = build_pool(census, n, config.pool_attempts, config.pool_threshold, seed,
                                      options.workers);
    write_pool(pool, census, config.output_dir / ("pool_n" + std::to_string(n) + ".csv"));
    return pools.emplace(n, std::move(pool)).first->second;
  };

  CalibrationCache calib(census);
  std::size_t new_done = 0;
  std::ofstream results(results_path, std::ios::binary | std::ios::app);
  for (const auto& scenario : scenarios) {
    if (done.count(scenario.id)) continue;
    if (options.max_new_scenarios && new_done >= *options.max_new_scenarios) break;
    ScenarioSummary s = run_scenario(scenario, census, pool_for(scenario.n_per_arm), calib,
                                     options.workers);
    append_results(results, s);
    results.flush();
    result.summaries.push_back(std::move(s));
    ++new_done;
    if (options.on_scenario) {
      options.on_scenario(result.summaries.back(), result.summaries.size(), scenarios.size());
    }
  }
  results.close();

  std::sort(result.summaries.begin(), result.summaries.end(),
            [](const auto& a, const auto& b) { return a.key.id < b.key.id; });
  result.complete = result.summaries.size() == scenarios.size();
  if (result.complete) {
    std::ofstream json(config.output_dir / "summary.json", std::ios::binary);
    json << summaries_json(result.summaries);
    const auto report =
        compare_report(result.summaries, closed_form_rows(result.summaries, config.formula));
    write_comparison(report, config.output_dir / "comparison.csv");
  }
  return result;
}

}  // namespace crtsim
