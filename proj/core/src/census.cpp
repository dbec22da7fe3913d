#include "crtsim/census.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <random>

#include <json.hpp>

#include "crtsim/errors.hpp"
#include "crtsim/format.hpp"
#include "crtsim/rng.hpp"
#include "crtsim/stats.hpp"

namespace crtsim {
namespace {

constexpr std::string_view kCensusHeader =
    "village_id,health_area,population,distance_km,n_children,n_mcv1";
constexpr double kMinDistanceKm = 0.1;
constexpr int kMaxRejections = 10000;

void validate_village(const Village& v, const std::string& where) {
  auto fail = [&](const std::string& why) { throw SchemaError(where + ": " + why); };
  if (v.village_id.empty()) fail("empty village_id");
  if (v.health_area.empty()) fail("empty health_area");
  if (v.n_children < 0) fail("n_children < 0");
  if (v.n_mcv1 < 0) fail("n_mcv1 < 0");
  if (v.n_mcv1 > v.n_children) {
    fail("n_mcv1 (" + std::to_string(v.n_mcv1) + ") exceeds n_children (" +
         std::to_string(v.n_children) + ")");
  }
  if (!(v.distance_km >= 0.0) || !std::isfinite(v.distance_km)) fail("distance_km must be >= 0");
  if (v.population < v.n_children) fail("population smaller than n_children");
}

// Negative binomial with mean `mu` and size `r`, conditioned on X >= lower.
struct TruncatedMoments {
  double mean;
  double sd;
  double mass;  // P(X >= lower)
};

TruncatedMoments truncated_negbin_moments(double mu, double r, int lower) {
  const double q = mu / (r + mu);
  double pmf = std::exp(r * std::log(r / (r + mu)));
  double mass = 0, s1 = 0, s2 = 0;
  for (long k = 0; k < 2'000'000; ++k) {
    const double kd = static_cast<double>(k);
    if (k >= lower) {
      mass += pmf;
      s1 += kd * pmf;
      s2 += kd * kd * pmf;
    }
    if (kd > mu && pmf < 1e-17 * std::max(mass, 1e-300)) break;
    pmf *= (kd + r) / (kd + 1.0) * q;
  }
  const double m = s1 / mass;
  return {m, std::sqrt(std::max(0.0, s2 / mass - m * m)), mass};
}

struct NegBinParams {
  double mu;
  double size;
};

// Finds NB(mu, size) whose >= lower conditional has the target mean and SD.
// When no such NB exists the mean is matched and the SD gap minimized.
NegBinParams fit_conditioned_negbin(double target_mean, double target_sd, int lower) {
  const double var = target_sd * target_sd;
  NegBinParams plain{target_mean, var > target_mean ? target_mean * target_mean / (var - target_mean)
                                                     : 1e8};
  std::array<double, 2> u{std::log(std::max(target_mean, 0.5)), std::log(std::min(plain.size, 1e6))};

  auto residual = [&](const std::array<double, 2>& x) {
    const auto m = truncated_negbin_moments(std::exp(x[0]), std::exp(x[1]), lower);
    return std::array<double, 2>{(m.mean - target_mean) / target_mean,
                                 (m.sd - target_sd) / target_sd};
  };

  auto f = residual(u);
  for (int iter = 0; iter < 100; ++iter) {
    if (std::abs(f[0]) < 1e-10 && std::abs(f[1]) < 1e-10) {
      return {std::exp(u[0]), std::exp(u[1])};
    }
    constexpr double h = 1e-6;
    std::array<std::array<double, 2>, 2> jac{};
    for (int j = 0; j < 2; ++j) {
      auto up = u;
      up[j] += h;
      const auto fu = residual(up);
      jac[0][j] = (fu[0] - f[0]) / h;
      jac[1][j] = (fu[1] - f[1]) / h;
    }
    const double det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    if (!std::isfinite(det) || std::abs(det) < 1e-14) break;
    std::array<double, 2> step{(jac[1][1] * f[0] - jac[0][1] * f[1]) / det,
                               (-jac[1][0] * f[0] + jac[0][0] * f[1]) / det};
    const double norm0 = std::hypot(f[0], f[1]);
    double lambda = 1.0;
    bool improved = false;
    for (int half = 0; half < 30; ++half, lambda *= 0.5) {
      std::array<double, 2> trial{u[0] - lambda * std::clamp(step[0], -2.0, 2.0),
                                  u[1] - lambda * std::clamp(step[1], -2.0, 2.0)};
      if (trial[1] > std::log(1e8)) trial[1] = std::log(1e8);
      const auto ft = residual(trial);
      if (std::hypot(ft[0], ft[1]) < norm0) {
        u = trial;
        f = ft;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  if (std::abs(f[0]) < 1e-6 && std::abs(f[1]) < 1e-6) return {std::exp(u[0]), std::exp(u[1])};
  if (target_mean <= lower) return plain;

  // No exact match: keep the conditioned mean exact and bring the SD as
  // close as the family allows.
  auto mu_for_mean = [&](double size) {
    double lo = -30.0, hi = std::log(target_mean) + 5.0;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      (truncated_negbin_moments(std::exp(mid), size, lower).mean < target_mean ? lo : hi) = mid;
    }
    return std::exp(0.5 * (lo + hi));
  };
  // Candidates the rejection sampler would rarely accept are ruled out.
  auto sd_gap = [&](double log_size) {
    const double size = std::exp(log_size);
    const auto m = truncated_negbin_moments(mu_for_mean(size), size, lower);
    return m.mass < 0.05 ? std::numeric_limits<double>::infinity() : std::abs(m.sd - target_sd);
  };
  double best = std::log(1e-3), best_gap = sd_gap(best);
  for (double x = std::log(1e-3); x <= std::log(1e6); x += 0.5) {
    const double g = sd_gap(x);
    if (g < best_gap) {
      best = x;
      best_gap = g;
    }
  }
  double a = best - 0.5, b = best + 0.5;
  for (int it = 0; it < 40; ++it) {
    const double m1 = a + (b - a) / 3, m2 = b - (b - a) / 3;
    if (sd_gap(m1) < sd_gap(m2)) {
      b = m2;
    } else {
      a = m1;
    }
  }
  const double size = std::exp(0.5 * (a + b));
  return {mu_for_mean(size), size};
}

NegBinParams cached_negbin(double target_mean, double target_sd, int lower) {
  static std::mutex mutex;
  static std::map<std::array<double, 3>, NegBinParams> cache;
  const std::array<double, 3> key{target_mean, target_sd, static_cast<double>(lower)};
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  const NegBinParams fit = fit_conditioned_negbin(target_mean, target_sd, lower);
  std::lock_guard lock(mutex);
  return cache.emplace(key, fit).first->second;
}

int draw_children(const HealthAreaProfile& p, const NegBinParams& nb, Stream& rng) {
  if (p.children_sd == 0.0) {
    const int v = static_cast<int>(std::lround(p.children_mean));
    if (v < Census::kMinChildren) {
      throw GenerationError("health area " + p.health_area +
                            ": children SD is 0 and mean is below the analysis minimum of " +
                            std::to_string(Census::kMinChildren));
    }
    return v;
  }
  for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
    double lambda = nb.mu;
    if (nb.size < 1e7) {
      std::gamma_distribution<double> gamma(nb.size, nb.mu / nb.size);
      lambda = gamma(rng);
    }
    std::poisson_distribution<int> poisson(lambda);
    const int k = lambda > 0 ? poisson(rng) : 0;
    if (k >= Census::kMinChildren) return k;
  }
  throw GenerationError("health area " + p.health_area +
                        ": could not draw a village with >= 5 children");
}

double draw_distance(const HealthAreaProfile& p, Stream& rng) {
  if (p.distance_sd == 0.0) {
    if (p.distance_mean < kMinDistanceKm) {
      throw GenerationError("health area " + p.health_area + ": distance SD is 0 and mean < 0.1 km");
    }
    return p.distance_mean;
  }
  std::normal_distribution<double> normal(p.distance_mean, p.distance_sd);
  for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
    const double d = normal(rng);
    if (d >= kMinDistanceKm) return d;
  }
  throw GenerationError("health area " + p.health_area + ": distance truncation infeasible");
}

std::int64_t draw_population(const HealthAreaProfile& p, Stream& rng) {
  if (p.population_sd == 0.0) return std::llround(p.population_mean);
  const double s2 = std::log1p((p.population_sd * p.population_sd) /
                               (p.population_mean * p.population_mean));
  std::lognormal_distribution<double> lognormal(std::log(p.population_mean) - 0.5 * s2,
                                                std::sqrt(s2));
  return std::llround(lognormal(rng));
}

double draw_rate(const HealthAreaProfile& p, Stream& rng) {
  const double m = p.mcv1_rate_mean;
  double rate = m;
  if (p.mcv1_rate_sd > 0.0) {
    // Beta needs var < m(1-m); larger targets are capped just inside.
    const double var = std::min(p.mcv1_rate_sd * p.mcv1_rate_sd, 0.99 * m * (1.0 - m));
    const double nu = m * (1.0 - m) / var - 1.0;
    std::gamma_distribution<double> ga(m * nu, 1.0);
    std::gamma_distribution<double> gb((1.0 - m) * nu, 1.0);
    const double x = ga(rng);
    const double y = gb(rng);
    rate = x + y > 0 ? x / (x + y) : m;
  }
  return std::clamp(rate, 0.01, 0.99);
}

void validate_profile(const HealthAreaProfile& p) {
  auto fail = [&](const std::string& why) {
    throw ValidationError("profile '" + p.health_area + "': " + why);
  };
  if (p.health_area.empty()) fail("empty health_area");
  if (p.n_villages < 1) fail("n_villages must be >= 1");
  for (double sd : {p.distance_sd, p.population_sd, p.children_sd, p.mcv1_rate_sd}) {
    if (!(sd >= 0.0)) fail("standard deviations must be >= 0");
  }
  if (!(p.population_mean > 0)) fail("population_mean must be > 0");
  if (!(p.children_mean > 0)) fail("children_mean must be > 0");
  if (!(p.mcv1_rate_mean >= 0.0 && p.mcv1_rate_mean <= 1.0)) fail("mcv1_rate_mean outside [0,1]");
}

HealthAreaProfile profile_from_json(const nlohmann::json& j, std::size_t index) {
  const std::string where = "profiles[" + std::to_string(index) + "]";
  if (!j.is_object()) throw SchemaError(where + ": expected an object");
  auto num = [&](const char* key) {
    if (!j.contains(key) || !j.at(key).is_number()) {
      throw SchemaError(where + "." + key + ": missing or not a number");
    }
    return j.at(key).get<double>();
  };
  HealthAreaProfile p;
  p.health_area = j.value("health_area", "HA" + std::to_string(index + 1));
  const double n = num("n_villages");
  if (n != std::floor(n) || n < 1) throw SchemaError(where + ".n_villages: expected a positive integer");
  p.n_villages = static_cast<int>(n);
  p.distance_mean = num("distance_mean");
  p.distance_sd = num("distance_sd");
  p.population_mean = num("population_mean");
  p.population_sd = num("population_sd");
  p.children_mean = num("children_mean");
  p.children_sd = num("children_sd");
  p.mcv1_rate_mean = num("mcv1_rate_mean");
  p.mcv1_rate_sd = num("mcv1_rate_sd");
  return p;
}

}  // namespace

Census::Census(std::vector<Village> villages) {
  if (villages.empty()) throw SchemaError("census has no villages");
  for (std::size_t i = 0; i < villages.size(); ++i) {
    validate_village(villages[i], "village " + std::to_string(i + 1) + " (" +
                                      villages[i].village_id + ")");
  }
  std::stable_sort(villages.begin(), villages.end(),
                   [](const Village& a, const Village& b) { return a.health_area < b.health_area; });
  {
    std::vector<std::string> ids;
    ids.reserve(villages.size());
    for (const auto& v : villages) ids.push_back(v.village_id);
    std::sort(ids.begin(), ids.end());
    if (auto dup = std::adjacent_find(ids.begin(), ids.end()); dup != ids.end()) {
      throw SchemaError("duplicate village_id '" + *dup + "'");
    }
  }
  all_ = std::move(villages);
  for (const auto& v : all_) {
    if (areas_.empty() || areas_.back() != v.health_area) areas_.push_back(v.health_area);
  }
  members_.resize(areas_.size());
  std::size_t area = 0;
  for (const auto& v : all_) {
    while (areas_[area] != v.health_area) ++area;
    if (v.n_children < kMinChildren) continue;
    members_[area].push_back(analysis_.size());
    area_of_.push_back(area);
    analysis_.push_back(v);
  }
  if (analysis_.empty()) throw SchemaError("census has no village with >= 5 children");
}

void Census::require_full_design() const {
  if (areas_.size() != kHealthAreas) {
    throw SchemaError("census has " + std::to_string(areas_.size()) +
                      " health areas; expected " + std::to_string(kHealthAreas));
  }
}

Census load_census(const std::filesystem::path& path, std::optional<std::size_t> expected_areas) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open census file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  if (line != kCensusHeader) {
    throw SchemaError(path.string() + ": header must be exactly '" + std::string(kCensusHeader) +
                      "', got '" + line + "'");
  }
  std::vector<Village> villages;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const std::string where = path.filename().string() + " row " + std::to_string(row);
    const auto f = split_csv(line);
    if (f.size() != 6) {
      throw SchemaError(where + ": expected 6 fields, found " + std::to_string(f.size()));
    }
    Village v;
    v.village_id = f[0];
    v.health_area = f[1];
    v.population = parse_int(f[2], where + " population");
    v.distance_km = parse_double(f[3], where + " distance_km");
    v.n_children = static_cast<int>(parse_int(f[4], where + " n_children"));
    v.n_mcv1 = static_cast<int>(parse_int(f[5], where + " n_mcv1"));
    validate_village(v, where);
    villages.push_back(std::move(v));
  }
  Census census(std::move(villages));
  if (expected_areas && census.health_areas().size() != *expected_areas) {
    throw SchemaError(path.string() + ": found " + std::to_string(census.health_areas().size()) +
                      " health areas; expected " + std::to_string(*expected_areas));
  }
  return census;
}

void write_census(const Census& census, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << kCensusHeader << '\n';
  for (const auto& v : census.all_villages()) {
    out << v.village_id << ',' << v.health_area << ',' << v.population << ','
        << format_double(v.distance_km) << ',' << v.n_children << ',' << v.n_mcv1 << '\n';
  }
}

std::vector<HealthAreaProfile> default_profiles() {
  // name, villages, distance, population, children, village MCV1 rate
  return {
      {"Amerom", 37, 6.4, 3.3, 198.5, 267.0, 18.6, 26.9, 0.73, 0.20},
      {"Blachidi", 28, 6.8, 4.2, 56.0, 69.8, 11.3, 7.5, 0.61, 0.23},
      {"Boulorom", 16, 6.3, 4.5, 292.7, 260.7, 9.7, 5.4, 0.70, 0.36},
      {"Hagerrom", 19, 4.6, 2.8, 276.7, 287.4, 14.2, 9.1, 0.75, 0.23},
      {"Kalimba", 17, 4.3, 1.7, 233.5, 189.0, 12.2, 6.8, 0.70, 0.19},
      {"Kindjira", 15, 2.7, 1.2, 302.8, 414.7, 11.1, 8.3, 0.87, 0.20},
      {"Kournotoulo", 11, 2.93, 1.41, 467.7, 217.6, 18.5, 11.2, 0.75, 0.16},
      {"Loulou_Kamerom", 10, 3.70, 2.40, 302.9, 125.4, 11.8, 4.3, 0.74, 0.20},
      {"Madem", 10, 2.82, 1.94, 312.5, 291.4, 14.8, 9.5, 0.66, 0.20},
      {"Matoura", 14, 4.16, 2.19, 333.9, 236.1, 15.8, 11.1, 0.83, 0.19},
      {"Safaye", 17, 4.06, 2.49, 286.5, 278.8, 13.4, 7.2, 0.68, 0.20},
      {"Zingui", 6, 1.17, 0.60, 940.3, 404.7, 29.0, 17.1, 0.64, 0.16},
  };
}

std::vector<HealthAreaProfile> load_profiles(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open profile file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": invalid JSON: " + e.what());
  }
  if (!doc.is_array()) throw SchemaError(path.string() + ": expected a JSON array of profiles");
  if (doc.size() != Census::kHealthAreas) {
    throw SchemaError(path.string() + ": expected " + std::to_string(Census::kHealthAreas) +
                      " health-area profiles, found " + std::to_string(doc.size()));
  }
  std::vector<HealthAreaProfile> out;
  for (std::size_t i = 0; i < doc.size(); ++i) out.push_back(profile_from_json(doc[i], i));
  for (const auto& p : out) validate_profile(p);
  return out;
}

void write_profiles(std::span<const HealthAreaProfile> profiles, const std::filesystem::path& path) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::array();
  for (const auto& p : profiles) {
    doc.push_back({{"health_area", p.health_area},
                   {"n_villages", p.n_villages},
                   {"distance_mean", p.distance_mean},
                   {"distance_sd", p.distance_sd},
                   {"population_mean", p.population_mean},
                   {"population_sd", p.population_sd},
                   {"children_mean", p.children_mean},
                   {"children_sd", p.children_sd},
                   {"mcv1_rate_mean", p.mcv1_rate_mean},
                   {"mcv1_rate_sd", p.mcv1_rate_sd}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

Census generate_synthetic_census(std::span<const HealthAreaProfile> profiles, std::uint64_t seed) {
  if (profiles.empty()) throw ValidationError("no health-area profiles given");
  for (const auto& p : profiles) validate_profile(p);

  std::vector<Village> villages;
  for (std::size_t a = 0; a < profiles.size(); ++a) {
    const auto& p = profiles[a];
    const NegBinParams nb = p.children_sd > 0
                                ? cached_negbin(p.children_mean, p.children_sd,
                                                         Census::kMinChildren)
                                : NegBinParams{p.children_mean, 1e8};
    Stream rng = Stream::derive({seed, tag(Purpose::kCensus), a});
    for (int i = 0; i < p.n_villages; ++i) {
      Village v;
      char id[32];
      std::snprintf(id, sizeof id, "-%03d", i + 1);
      v.village_id = p.health_area + id;
      v.health_area = p.health_area;
      v.distance_km = draw_distance(p, rng);
      v.n_children = draw_children(p, nb, rng);
      v.population = std::max<std::int64_t>(draw_population(p, rng), v.n_children);
      const double rate = draw_rate(p, rng);
      std::binomial_distribution<int> binom(v.n_children, rate);
      v.n_mcv1 = binom(rng);
      villages.push_back(std::move(v));
    }
  }
  return Census(std::move(villages));
}

CensusSummary summarize_census(const Census& census) {
  CensusSummary out;
  const auto villages = census.villages();
  out.n_villages = villages.size();
  for (std::size_t a = 0; a < census.health_areas().size(); ++a) {
    const auto idx = census.members(a);
    if (idx.empty()) {
      throw ValidationError("health area '" + census.health_areas()[a] +
                            "' has no analysis villages");
    }
    std::vector<double> dist, pop, kids, rate;
    AreaSummary s;
    for (std::size_t i : idx) {
      const auto& v = villages[i];
      dist.push_back(v.distance_km);
      pop.push_back(static_cast<double>(v.population));
      kids.push_back(v.n_children);
      rate.push_back(v.baseline_rate());
      s.total_children += v.n_children;
      s.total_mcv1 += v.n_mcv1;
    }
    auto& p = s.profile;
    p.health_area = census.health_areas()[a];
    p.n_villages = static_cast<int>(idx.size());
    p.distance_mean = mean(dist);
    p.distance_sd = sample_sd(dist);
    p.population_mean = mean(pop);
    p.population_sd = sample_sd(pop);
    p.children_mean = mean(kids);
    p.children_sd = sample_sd(kids);
    p.mcv1_rate_mean = mean(rate);
    p.mcv1_rate_sd = sample_sd(rate);
    s.rate_median = quantile(rate, 0.5);
    s.rate_q1 = quantile(rate, 0.25);
    s.rate_q3 = quantile(rate, 0.75);
    out.total_children += s.total_children;
    out.total_mcv1 += s.total_mcv1;
    out.areas.push_back(std::move(s));
  }
  return out;
}

double empirical_logit(int y, int m) {
  if (m < 1) throw DomainError("empirical_logit: denominator must be >= 1");
  if (y < 0 || y > m) throw DomainError("empirical_logit: count outside [0, m]");
  return std::log(y + 0.5) - std::log(m - y + 0.5);
}

}  // namespace crtsim
