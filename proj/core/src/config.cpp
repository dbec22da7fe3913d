#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "crtsim/engine.hpp"
#include "crtsim/errors.hpp"

namespace crtsim {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& why) {
  throw SchemaError(path + ": " + why);
}

double number_at(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

long long integer_at(const json& j, const std::string& path) {
  if (!j.is_number_integer() && !j.is_number_unsigned()) {
    if (j.is_number_float() && std::floor(j.get<double>()) == j.get<double>()) {
      return static_cast<long long>(j.get<double>());
    }
    fail(path, "expected an integer");
  }
  return j.get<long long>();
}

std::uint64_t seed_at(const json& j, const std::string& path) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  const long long v = integer_at(j, path);
  if (v < 0) fail(path, "expected a non-negative integer");
  return static_cast<std::uint64_t>(v);
}

bool bool_at(const json& j, const std::string& path) {
  if (!j.is_boolean()) fail(path, "expected true or false");
  return j.get<bool>();
}

std::string string_at(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

const json& object_at(const json& j, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
  return j;
}

std::vector<double> numbers_at(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) fail(path, "expected a non-empty array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(number_at(j[i], path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

void reject_unknown(const json& j, const std::string& path, const std::set<std::string>& known) {
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) fail(path + "." + key, "unknown field");
  }
}

CoefficientSet coef_at(const json& j, const std::string& path, const std::string& mode) {
  if (j.is_object()) {
    reject_unknown(j, path, {"beta_pop", "beta_dist"});
    if (!j.contains("beta_pop")) fail(path + ".beta_pop", "missing");
    if (!j.contains("beta_dist")) fail(path + ".beta_dist", "missing");
    return CoefficientSet::custom(number_at(j["beta_pop"], path + ".beta_pop"),
                                  number_at(j["beta_dist"], path + ".beta_dist"));
  }
  if (mode == "paired") {
    const long long k = integer_at(j, path);
    if (k < 1 || k > 3) fail(path, "coefficient set must be 1, 2 or 3");
    return CoefficientSet::published(static_cast<int>(k));
  }
  if (!j.is_array() || j.size() != 2) fail(path, "crossed mode expects [pop_index, dist_index]");
  const long long a = integer_at(j[0], path + "[0]");
  const long long b = integer_at(j[1], path + "[1]");
  if (a < 1 || a > 3 || b < 1 || b > 3) fail(path, "indices must be 1, 2 or 3");
  return CoefficientSet::crossed(static_cast<int>(a), static_cast<int>(b));
}

}  // namespace

void StudyConfig::apply(const ScaleProfile& scale) {
  pool_attempts = scale.pool_attempts;
  n_reps_null = scale.n_reps_null;
  n_reps_alt = scale.n_reps_alt;
}

void StudyConfig::validate() const {
  auto bad = [](const std::string& path, const std::string& why) { fail(path, why); };
  if (census_file && profiles_file) bad("$.census", "give either file or profiles, not both");
  if (pool_attempts < 1) bad("$.pool.n_attempts", "must be >= 1");
  if (!(pool_threshold > 0.0)) bad("$.pool.threshold", "must be > 0");
  if (cer.empty()) bad("$.grid.cer", "must be non-empty");
  if (delta.empty()) bad("$.grid.delta", "must be non-empty");
  if (n_per_arm.empty()) bad("$.grid.n_per_arm", "must be non-empty");
  if (coef_sets.empty()) bad("$.grid.coef_sets", "must be non-empty");
  if (icc_v.empty()) bad("$.grid.icc_v", "must be non-empty");
  for (std::size_t i = 0; i < cer.size(); ++i) {
    if (!(cer[i] > 0.0 && cer[i] < 1.0)) bad("$.grid.cer[" + std::to_string(i) + "]", "must lie in (0, 1)");
  }
  for (std::size_t i = 0; i < delta.size(); ++i) {
    if (!(delta[i] >= 0.0 && delta[i] < 1.0)) bad("$.grid.delta[" + std::to_string(i) + "]", "must lie in [0, 1)");
    for (double c : cer) {
      if (!(c + delta[i] < 1.0)) bad("$.grid.delta[" + std::to_string(i) + "]", "cer + delta must stay below 1");
    }
  }
  for (std::size_t i = 0; i < n_per_arm.size(); ++i) {
    if (n_per_arm[i] < 2) bad("$.grid.n_per_arm[" + std::to_string(i) + "]", "must be >= 2");
  }
  for (std::size_t i = 0; i < icc_v.size(); ++i) {
    if (!(icc_v[i] >= 0.0 && icc_v[i] < 1.0)) bad("$.grid.icc_v[" + std::to_string(i) + "]", "must lie in [0, 1)");
  }
  if (n_reps_null < 1) bad("$.n_reps_null", "must be >= 1");
  if (n_reps_alt < 1) bad("$.n_reps_alt", "must be >= 1");
  if (!std::isfinite(critical_z)) bad("$.critical_z", "must be finite");
  if (!(formula.icc_h >= 0.0 && formula.icc_h < 1.0)) bad("$.formula.icc_h", "must lie in [0, 1)");
  if (!(formula.alpha > 0.0 && formula.alpha < 1.0)) bad("$.formula.alpha", "must lie in (0, 1)");
  if (!(formula.children_per_village > 0.0)) bad("$.formula.children_per_village", "must be > 0");
  if (formula.clusters_per_arm < 2) bad("$.formula.clusters_per_arm", "must be >= 2");
  if (formula.n_clusters < 1) bad("$.formula.n_clusters", "must be >= 1");
}

StudyConfig load_study_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open config file " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": invalid JSON: " + e.what());
  }
  object_at(doc, "$");
  reject_unknown(doc, "$", {"census", "pool", "grid", "n_reps_null", "n_reps_alt", "critical_z",
                            "master_seed", "output_dir", "baseline_offset", "formula", "scale"});

  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };

  StudyConfig cfg;
  if (doc.contains("scale")) {
    const auto s = string_at(doc["scale"], "$.scale");
    if (s == "desk") {
      cfg.apply(ScaleProfile::desk());
    } else if (s == "full") {
      cfg.apply(ScaleProfile::full());
    } else {
      fail("$.scale", "expected \"desk\" or \"full\"");
    }
  }
  if (doc.contains("census")) {
    const auto& c = object_at(doc["census"], "$.census");
    reject_unknown(c, "$.census", {"file", "profiles", "seed"});
    if (c.contains("file")) cfg.census_file = resolve(string_at(c["file"], "$.census.file"));
    if (c.contains("profiles")) {
      const auto p = string_at(c["profiles"], "$.census.profiles");
      if (p != "default") cfg.profiles_file = resolve(p);
    }
    if (c.contains("seed")) cfg.census_seed = seed_at(c["seed"], "$.census.seed");
  }
  if (doc.contains("pool")) {
    const auto& p = object_at(doc["pool"], "$.pool");
    reject_unknown(p, "$.pool", {"n_attempts", "threshold"});
    if (p.contains("n_attempts")) {
      const long long n = integer_at(p["n_attempts"], "$.pool.n_attempts");
      if (n < 1) fail("$.pool.n_attempts", "must be >= 1");
      cfg.pool_attempts = static_cast<std::uint64_t>(n);
    }
    if (p.contains("threshold")) cfg.pool_threshold = number_at(p["threshold"], "$.pool.threshold");
  }
  if (doc.contains("grid")) {
    const auto& g = object_at(doc["grid"], "$.grid");
    reject_unknown(g, "$.grid", {"cer", "delta", "n_per_arm", "coef_sets", "coef_mode", "icc_v"});
    if (g.contains("cer")) cfg.cer = numbers_at(g["cer"], "$.grid.cer");
    if (g.contains("delta")) cfg.delta = numbers_at(g["delta"], "$.grid.delta");
    if (g.contains("icc_v")) cfg.icc_v = numbers_at(g["icc_v"], "$.grid.icc_v");
    if (g.contains("n_per_arm")) {
      const auto& a = g["n_per_arm"];
      if (!a.is_array() || a.empty()) fail("$.grid.n_per_arm", "expected a non-empty array of integers");
      cfg.n_per_arm.clear();
      for (std::size_t i = 0; i < a.size(); ++i) {
        cfg.n_per_arm.push_back(
            static_cast<int>(integer_at(a[i], "$.grid.n_per_arm[" + std::to_string(i) + "]")));
      }
    }
    std::string mode = "paired";
    if (g.contains("coef_mode")) {
      mode = string_at(g["coef_mode"], "$.grid.coef_mode");
      if (mode != "paired" && mode != "crossed") fail("$.grid.coef_mode", "expected \"paired\" or \"crossed\"");
    }
    if (g.contains("coef_sets")) {
      const auto& a = g["coef_sets"];
      if (!a.is_array() || a.empty()) fail("$.grid.coef_sets", "expected a non-empty array");
      cfg.coef_sets.clear();
      for (std::size_t i = 0; i < a.size(); ++i) {
        cfg.coef_sets.push_back(coef_at(a[i], "$.grid.coef_sets[" + std::to_string(i) + "]", mode));
      }
    } else if (mode == "crossed") {
      cfg.coef_sets.clear();
      for (int a = 1; a <= 3; ++a) {
        for (int b = 1; b <= 3; ++b) cfg.coef_sets.push_back(CoefficientSet::crossed(a, b));
      }
    }
  }
  if (doc.contains("n_reps_null")) cfg.n_reps_null = static_cast<int>(integer_at(doc["n_reps_null"], "$.n_reps_null"));
  if (doc.contains("n_reps_alt")) cfg.n_reps_alt = static_cast<int>(integer_at(doc["n_reps_alt"], "$.n_reps_alt"));
  if (doc.contains("critical_z")) cfg.critical_z = number_at(doc["critical_z"], "$.critical_z");
  if (doc.contains("master_seed")) cfg.master_seed = seed_at(doc["master_seed"], "$.master_seed");
  if (doc.contains("baseline_offset")) cfg.baseline_offset = bool_at(doc["baseline_offset"], "$.baseline_offset");
  if (doc.contains("output_dir")) cfg.output_dir = resolve(string_at(doc["output_dir"], "$.output_dir"));
  if (doc.contains("formula")) {
    const auto& f = object_at(doc["formula"], "$.formula");
    reject_unknown(f, "$.formula", {"icc_h", "alpha", "children_per_village", "clusters_per_arm", "n_clusters"});
    if (f.contains("icc_h")) cfg.formula.icc_h = number_at(f["icc_h"], "$.formula.icc_h");
    if (f.contains("alpha")) cfg.formula.alpha = number_at(f["alpha"], "$.formula.alpha");
    if (f.contains("children_per_village")) {
      cfg.formula.children_per_village = number_at(f["children_per_village"], "$.formula.children_per_village");
    }
    if (f.contains("clusters_per_arm")) {
      cfg.formula.clusters_per_arm = static_cast<int>(integer_at(f["clusters_per_arm"], "$.formula.clusters_per_arm"));
    }
    if (f.contains("n_clusters")) {
      cfg.formula.n_clusters = static_cast<int>(integer_at(f["n_clusters"], "$.formula.n_clusters"));
    }
  }
  cfg.validate();
  return cfg;
}

Census make_census(const StudyConfig& config) {
  if (config.census_file) return load_census(*config.census_file);
  const auto profiles = config.profiles_file ? load_profiles(*config.profiles_file) : default_profiles();
  return generate_synthetic_census(profiles, config.census_seed);
}

}  // namespace crtsim
