// crtsim: command-line front end for census generation, constrained
// randomization, closed-form power and the simulation study.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crtsim/census.hpp"
#include "crtsim/closed_form.hpp"
#include "crtsim/engine.hpp"
#include "crtsim/errors.hpp"
#include "crtsim/format.hpp"
#include "crtsim/glmm.hpp"
#include "crtsim/randomization.hpp"

namespace {

using namespace crtsim;

struct GenerateArgs {
  std::string profiles;
  bool use_default = false;
  std::uint64_t seed = 0;
  std::string out;
};

struct PoolArgs {
  std::string census;
  int n_per_arm = 60;
  long long attempts = 50'000;
  double threshold = 0.20;
  std::uint64_t seed = 0;
  std::string out;
  unsigned workers = 0;
};

struct FormulaArgs {
  std::optional<double> m;
  std::optional<double> villages;
  double children_per_village = 14.0;
  int n_clusters = 12;
  int c = 6;
  double pi0 = 0.70;
  double pi1 = 0.85;
  double icc = 0.048;
  double alpha = 0.05;
  std::string curve;
};

struct SimulateArgs {
  std::string config;
  bool desk = false;
  std::string out;
  unsigned workers = 0;
  bool quiet = false;
};

struct CompareArgs {
  std::string sim;
  FormulaParams formula;
  std::string out;
};

struct IccArgs {
  std::string census;
  std::string level = "both";
  int n_quad = 21;
  std::string out;
};

int generate_census(const GenerateArgs& a) {
  const auto profiles = a.use_default ? default_profiles() : load_profiles(a.profiles);
  const Census census = generate_synthetic_census(profiles, a.seed);
  write_census(census, a.out);
  std::cout << "wrote " << census.all_villages().size() << " villages (" << census.size()
            << " with >= " << Census::kMinChildren << " children) to " << a.out << '\n';
  return 0;
}

int build_pool_cmd(const PoolArgs& a) {
  if (a.attempts < 1) throw ValidationError("--attempts must be >= 1");
  const Census census = load_census(a.census);
  const ConstrainedPool pool =
      build_pool(census, a.n_per_arm, static_cast<std::uint64_t>(a.attempts), a.threshold, a.seed,
                 a.workers);
  write_pool(pool, census, a.out);
  std::cout << "accepted " << pool.draws.size() << " of " << pool.n_attempted << " draws ("
            << format_fixed(100.0 * pool.acceptance_rate(), 2) << "%)\n";
  return 0;
}

int power_formula(const FormulaArgs& a) {
  PowerInputs in;
  if (a.m) {
    in.m = *a.m;
  } else {
    in.m = cluster_size(a.villages.value_or(60.0), a.children_per_village, a.n_clusters);
  }
  in.c = a.c;
  in.pi0 = a.pi0;
  in.pi1 = a.pi1;
  in.icc = a.icc;
  in.alpha = a.alpha;
  std::cout << format_fixed(power(in), 3) << '\n';

  if (!a.curve.empty()) {
    // Log-spaced sweep from 2 to 10^6 children per cluster.
    std::vector<double> sizes;
    for (int k = 0; k <= 200; ++k) {
      sizes.push_back(std::round(2.0 * std::pow(5e5, k / 200.0)));
    }
    sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
    write_power_curve(in, sizes, a.curve);
  }
  return 0;
}

int simulate(const SimulateArgs& a) {
  StudyConfig config = load_study_config(a.config);
  if (a.desk) config.apply(ScaleProfile::desk());
  if (!a.out.empty()) config.output_dir = a.out;
  config.validate();

  StudyOptions options;
  options.workers = a.workers;
  if (!a.quiet) {
    options.on_scenario = [](const ScenarioSummary& s, std::size_t done, std::size_t total) {
      std::cerr << '[' << done << '/' << total << "] scenario " << s.key.id << " beta "
                << format_fixed(s.of(Method::kBeta).rate, 3) << '\n';
    };
  }
  const StudyResult result = run_study(config, options);
  std::cout << "scenarios: " << result.summaries.size() << " (" << result.resumed
            << " resumed); results in " << config.output_dir.string() << '\n';
  return 0;
}

int compare(const CompareArgs& a) {
  const auto summaries = read_results(a.sim);
  if (summaries.empty()) throw ValidationError(a.sim + " holds no complete scenarios");
  const auto report = compare_report(summaries, closed_form_rows(summaries, a.formula));
  write_comparison(report, a.out);
  std::cout << "wrote " << report.rows.size() << " rows to " << a.out << '\n';
  return 0;
}

int fit_icc(const IccArgs& a) {
  const Census census = load_census(a.census);
  std::vector<IccLevel> levels;
  if (a.level == "village" || a.level == "both") levels.push_back(IccLevel::kVillage);
  if (a.level == "health_zone" || a.level == "both") levels.push_back(IccLevel::kHealthZone);

  std::string text = "[\n";
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const GlmmFit fit = fit_random_intercept(census, levels[i], a.n_quad);
    if (!fit.converged) {
      throw ComputeError(std::string("random-intercept fit at level ") + level_name(levels[i]) +
                         " did not converge");
    }
    if (i) text += ",\n";
    text += glmm_report_json(fit);
  }
  text += "\n]\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    std::ofstream(a.out, std::ios::binary) << text;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cluster randomized trial design: census, constrained randomization, power"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate-census", "Draw a synthetic village census");
  auto* g_prof = g->add_option("--profiles", gen.profiles, "Health-area profile JSON")
                     ->check(CLI::ExistingFile);
  auto* g_def = g->add_flag("--default", gen.use_default, "Use the built-in twelve profiles");
  g_prof->excludes(g_def);
  g->add_option("--seed", gen.seed, "Random seed")->required();
  g->add_option("--out", gen.out, "Output census CSV")->required();
  g->callback([&] {
    if (gen.profiles.empty() && !gen.use_default) {
      throw CLI::ValidationError("one of --profiles or --default is required");
    }
  });

  PoolArgs pool;
  auto* p = app.add_subcommand("build-pool", "Build a covariate-constrained randomization pool");
  p->add_option("--census", pool.census, "Census CSV")->required()->check(CLI::ExistingFile);
  p->add_option("--n-per-arm", pool.n_per_arm, "Villages per arm")->capture_default_str();
  p->add_option("--attempts", pool.attempts, "Candidate draws")->capture_default_str();
  p->add_option("--threshold", pool.threshold, "Maximum average |SMD|")->capture_default_str();
  p->add_option("--seed", pool.seed, "Random seed")->required();
  p->add_option("--out", pool.out, "Output pool CSV")->required();
  p->add_option("--workers", pool.workers, "Threads (0 = all cores)")->capture_default_str();

  FormulaArgs fa;
  auto* f = app.add_subcommand("power-formula", "Closed-form power for equal cluster sizes");
  auto* f_m = f->add_option("--m", fa.m, "Children per cluster");
  auto* f_v = f->add_option("--villages-per-arm", fa.villages,
                            "Villages per arm; sets m = 2 v cpv / n_clusters");
  f_m->excludes(f_v);
  f->add_option("--children-per-village", fa.children_per_village, "Children per village")
      ->capture_default_str();
  f->add_option("--n-clusters", fa.n_clusters, "Total clusters")->capture_default_str();
  f->add_option("--c", fa.c, "Clusters per arm")->capture_default_str();
  f->add_option("--pi0", fa.pi0, "Control-arm rate")->capture_default_str();
  f->add_option("--pi1", fa.pi1, "Intervention-arm rate")->capture_default_str();
  f->add_option("--icc", fa.icc, "Intracluster correlation")->capture_default_str();
  f->add_option("--alpha", fa.alpha, "One-sided significance level")->capture_default_str();
  f->add_option("--curve", fa.curve, "Also write an m-sweep CSV here");

  SimulateArgs sa;
  auto* s = app.add_subcommand("simulate", "Run the simulation study described by a config");
  s->add_option("--config", sa.config, "Study config JSON")->required()->check(CLI::ExistingFile);
  s->add_flag("--desk-scale", sa.desk, "Use desk-scale pool size and replicate counts");
  s->add_option("--out", sa.out, "Output directory (overrides the config)");
  s->add_option("--workers", sa.workers, "Threads (0 = all cores)")->capture_default_str();
  s->add_flag("--quiet", sa.quiet, "No per-scenario progress on stderr");

  CompareArgs ca;
  auto* c = app.add_subcommand("compare", "Join simulated rates with closed-form power");
  c->add_option("--sim", ca.sim, "results.csv from simulate")->required()->check(CLI::ExistingFile);
  c->add_option("--icc", ca.formula.icc_h, "Health-area ICC for the formula")->capture_default_str();
  c->add_option("--alpha", ca.formula.alpha, "One-sided alpha")->capture_default_str();
  c->add_option("--children-per-village", ca.formula.children_per_village, "Children per village")
      ->capture_default_str();
  c->add_option("--c", ca.formula.clusters_per_arm, "Clusters per arm")->capture_default_str();
  c->add_option("--n-clusters", ca.formula.n_clusters, "Total clusters")->capture_default_str();
  c->add_option("--out", ca.out, "Output comparison CSV")->required();

  IccArgs ia;
  auto* i = app.add_subcommand("fit-icc", "Random-intercept logistic ICC of the baseline census");
  i->add_option("--census", ia.census, "Census CSV")->required()->check(CLI::ExistingFile);
  i->add_option("--level", ia.level, "village, health_zone or both")
      ->check(CLI::IsMember({"village", "health_zone", "both"}))
      ->capture_default_str();
  i->add_option("--n-quad", ia.n_quad, "Quadrature nodes per cluster")->capture_default_str();
  i->add_option("--out", ia.out, "Write the JSON report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*g) return generate_census(gen);
    if (*p) return build_pool_cmd(pool);
    if (*f) return power_formula(fa);
    if (*s) return simulate(sa);
    if (*c) return compare(ca);
    if (*i) return fit_icc(ia);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ComputeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
