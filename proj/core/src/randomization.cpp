#include "crtsim/randomization.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <unordered_map>

#include <json.hpp>

#include "crtsim/errors.hpp"
#include "crtsim/format.hpp"
#include "crtsim/parallel.hpp"
#include "crtsim/stats.hpp"

namespace crtsim {
namespace {

constexpr std::string_view kPoolHeader =
    "draw_id,allocation_bitmask,smd_pop,smd_dist,smd_mcv1,avg_smd,selection_blob";

std::size_t uniform_index(Stream& rng, std::size_t n) {
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  return pick(rng);
}

double average(const std::array<double, 3>& s) { return (s[0] + s[1] + s[2]) / 3.0; }

}  // namespace

const char* arm_name(Arm arm) noexcept {
  return arm == Arm::kTreatment ? "treatment" : "control";
}

Allocation::Allocation(std::uint32_t treatment_mask) : mask_(treatment_mask) {
  if ((mask_ >> kAreas) != 0 || std::popcount(mask_) != static_cast<int>(kPerArm)) {
    throw ValidationError("allocation mask " + std::to_string(mask_) + " must treat exactly " +
                          std::to_string(kPerArm) + " of " + std::to_string(kAreas) + " areas");
  }
}

std::vector<std::size_t> Allocation::areas_in(Arm arm) const {
  std::vector<std::size_t> out;
  for (std::size_t a = 0; a < kAreas; ++a) {
    if (arm_of(a) == arm) out.push_back(a);
  }
  return out;
}

double smd(std::span<const double> treated, std::span<const double> control) {
  if (treated.size() < 2 || control.size() < 2) {
    throw DomainError("smd: each group needs at least two values");
  }
  const double diff = mean(treated) - mean(control);
  if (diff == 0.0) return 0.0;
  const double pooled = std::sqrt((sample_variance(treated) + sample_variance(control)) / 2.0);
  if (pooled == 0.0) return std::numeric_limits<double>::infinity();
  return std::abs(diff) / pooled;
}

std::vector<int> apportion(std::span<const int> capacities, int total) {
  const std::size_t n = capacities.size();
  long long capacity = 0;
  for (int c : capacities) {
    if (c < 0) throw DomainError("apportion: negative capacity");
    capacity += c;
  }
  if (total < 0) throw DomainError("apportion: negative total");
  if (capacity < total) {
    throw CapacityError("apportion: " + std::to_string(total) + " requested but only " +
                        std::to_string(capacity) + " available");
  }

  std::vector<int> quota(n, 0);
  std::vector<bool> saturated(n, false);
  for (;;) {
    long long remaining = total;
    long long weight = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (saturated[i]) {
        remaining -= quota[i];
      } else {
        weight += capacities[i];
      }
    }
    if (weight == 0) break;

    std::vector<long long> rem(n, -1);
    long long given = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (saturated[i]) continue;
      const long long num = remaining * capacities[i];
      quota[i] = static_cast<int>(num / weight);
      rem[i] = num % weight;
      given += quota[i];
    }
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < n; ++i) {
      if (!saturated[i]) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (rem[a] != rem[b]) return rem[a] > rem[b];
      return capacities[a] > capacities[b];
    });
    for (long long k = 0; k < remaining - given; ++k) ++quota[order[static_cast<std::size_t>(k)]];

    bool clipped = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!saturated[i] && quota[i] > capacities[i]) {
        quota[i] = capacities[i];
        saturated[i] = true;
        clipped = true;
      }
    }
    if (!clipped) break;
  }
  return quota;
}

std::vector<int> apportion_villages(const Census& census, const Allocation& allocation,
                                    int n_per_arm) {
  census.require_full_design();
  if (n_per_arm < 1) throw ValidationError("n_per_arm must be >= 1");
  std::vector<int> quotas(census.health_areas().size(), 0);
  for (Arm arm : {Arm::kControl, Arm::kTreatment}) {
    const auto areas = allocation.areas_in(arm);
    std::vector<int> caps;
    for (std::size_t a : areas) caps.push_back(static_cast<int>(census.members(a).size()));
    std::vector<int> q;
    try {
      q = apportion(caps, n_per_arm);
    } catch (const CapacityError&) {
      throw CapacityError(std::string(arm_name(arm)) + " arm has " +
                          std::to_string(std::accumulate(caps.begin(), caps.end(), 0)) +
                          " analysis villages; " + std::to_string(n_per_arm) + " requested");
    }
    for (std::size_t k = 0; k < areas.size(); ++k) quotas[areas[k]] = q[k];
  }
  return quotas;
}

Allocation draw_allocation(Stream& rng) {
  std::array<std::size_t, Allocation::kAreas> areas;
  std::iota(areas.begin(), areas.end(), std::size_t{0});
  std::uint32_t mask = 0;
  for (std::size_t i = 0; i < Allocation::kPerArm; ++i) {
    const std::size_t j = i + uniform_index(rng, Allocation::kAreas - i);
    std::swap(areas[i], areas[j]);
    mask |= 1u << areas[i];
  }
  return Allocation(mask);
}

std::array<double, 3> balance(const Census& census, const VillageSelection& selection) {
  const auto villages = census.villages();
  std::array<double, 3> out{};
  std::vector<double> t, c;
  for (std::size_t k = 0; k < 3; ++k) {
    auto value = [&](std::uint32_t i) {
      const auto& v = villages[i];
      switch (static_cast<BalanceCovariate>(k)) {
        case BalanceCovariate::kPopulation:
          return static_cast<double>(v.population);
        case BalanceCovariate::kDistance:
          return v.distance_km;
        case BalanceCovariate::kBaselineRate:
          return v.baseline_rate();
      }
      return 0.0;
    };
    t.clear();
    c.clear();
    for (auto i : selection.treatment) t.push_back(value(i));
    for (auto i : selection.control) c.push_back(value(i));
    out[k] = smd(t, c);
  }
  return out;
}

RandomizationDraw draw_candidate(const Census& census, int n_per_arm, Stream& rng) {
  RandomizationDraw draw;
  draw.allocation = draw_allocation(rng);
  const auto quotas = apportion_villages(census, draw.allocation, n_per_arm);
  draw.selection.n_per_arm = n_per_arm;
  std::vector<std::uint32_t> pool;
  for (std::size_t a = 0; a < census.health_areas().size(); ++a) {
    const auto members = census.members(a);
    pool.assign(members.begin(), members.end());
    const auto quota = static_cast<std::size_t>(quotas[a]);
    for (std::size_t i = 0; i < quota; ++i) {
      const std::size_t j = i + uniform_index(rng, pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    auto& dest = draw.allocation.arm_of(a) == Arm::kTreatment ? draw.selection.treatment
                                                              : draw.selection.control;
    dest.insert(dest.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(quota));
  }
  std::sort(draw.selection.control.begin(), draw.selection.control.end());
  std::sort(draw.selection.treatment.begin(), draw.selection.treatment.end());
  draw.smd = balance(census, draw.selection);
  draw.avg_smd = average(draw.smd);
  return draw;
}

ConstrainedPool build_pool(const Census& census, int n_per_arm, std::uint64_t n_attempts,
                           double threshold, std::uint64_t seed, unsigned workers) {
  if (n_attempts < 1) throw ValidationError("pool attempts must be >= 1");
  if (!(threshold > 0.0)) throw ValidationError("pool threshold must be > 0");
  census.require_full_design();
  // Allocations whose arms cannot supply n_per_arm villages count as
  // rejected attempts; fail up front only if no allocation is feasible.
  {
    std::optional<CapacityError> first_error;
    bool feasible = false;
    for (std::uint32_t mask = 0; mask < (1u << Allocation::kAreas) && !feasible; ++mask) {
      if (std::popcount(mask) != static_cast<int>(Allocation::kPerArm)) continue;
      try {
        (void)apportion_villages(census, Allocation(mask), n_per_arm);
        feasible = true;
      } catch (const CapacityError& e) {
        if (!first_error) first_error = e;
      }
    }
    if (!feasible) throw *first_error;
  }

  constexpr std::uint64_t kChunk = 512;
  const std::uint64_t n_chunks = (n_attempts + kChunk - 1) / kChunk;
  std::vector<std::vector<RandomizationDraw>> accepted(n_chunks);
  std::vector<std::uint64_t> infeasible(n_chunks, 0);
  parallel_for(n_chunks, workers, [&](std::size_t chunk) {
    const std::uint64_t first = chunk * kChunk;
    const std::uint64_t last = std::min(n_attempts, first + kChunk);
    for (std::uint64_t attempt = first; attempt < last; ++attempt) {
      Stream rng = Stream::derive({seed, tag(Purpose::kPool), attempt});
      RandomizationDraw d;
      try {
        d = draw_candidate(census, n_per_arm, rng);
      } catch (const CapacityError&) {
        ++infeasible[chunk];
        continue;
      }
      if (d.avg_smd <= threshold) {
        d.draw_id = attempt;
        accepted[chunk].push_back(std::move(d));
      }
    }
  });

  ConstrainedPool pool;
  pool.threshold = threshold;
  pool.n_attempted = n_attempts;
  pool.seed = seed;
  pool.n_per_arm = n_per_arm;
  for (auto n : infeasible) pool.n_infeasible += n;
  for (auto& chunk : accepted) {
    std::move(chunk.begin(), chunk.end(), std::back_inserter(pool.draws));
  }
  if (pool.draws.empty()) {
    throw EmptyPoolError("no candidate among " + std::to_string(n_attempts) +
                         " attempts met average SMD <= " + format_double(threshold) +
                         "; relax the threshold or raise the attempt count");
  }
  return pool;
}

const RandomizationDraw& sample_from_pool(const ConstrainedPool& pool, Stream& rng) {
  if (pool.draws.empty()) throw EmptyPoolError("cannot sample from an empty pool");
  return pool.draws[uniform_index(rng, pool.draws.size())];
}

void write_pool(const ConstrainedPool& pool, const Census& census,
                const std::filesystem::path& path) {
  const auto villages = census.villages();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << kPoolHeader << '\n';
  for (const auto& d : pool.draws) {
    out << d.draw_id << ',' << d.allocation.treatment_mask() << ',' << format_double(d.smd[0])
        << ',' << format_double(d.smd[1]) << ',' << format_double(d.smd[2]) << ','
        << format_double(d.avg_smd) << ',';
    for (std::size_t k = 0; k < d.selection.control.size(); ++k) {
      out << (k ? ";" : "") << villages[d.selection.control[k]].village_id;
    }
    out << '|';
    for (std::size_t k = 0; k < d.selection.treatment.size(); ++k) {
      out << (k ? ";" : "") << villages[d.selection.treatment[k]].village_id;
    }
    out << '\n';
  }
  nlohmann::ordered_json meta = {{"threshold", pool.threshold},
                                 {"n_attempted", pool.n_attempted},
                                 {"n_infeasible", pool.n_infeasible},
                                 {"n_accepted", pool.draws.size()},
                                 {"seed", pool.seed},
                                 {"n_per_arm", pool.n_per_arm}};
  std::ofstream side(path.string() + ".meta.json", std::ios::binary);
  side << meta.dump(2) << '\n';
}

ConstrainedPool load_pool(const std::filesystem::path& path, const Census& census) {
  census.require_full_design();
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open pool file " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kPoolHeader) throw SchemaError(path.string() + ": unexpected pool header");

  std::unordered_map<std::string, std::uint32_t> index;
  const auto villages = census.villages();
  for (std::uint32_t i = 0; i < villages.size(); ++i) index.emplace(villages[i].village_id, i);

  auto parse_ids = [&](std::string_view blob, const std::string& where) {
    std::vector<std::uint32_t> out;
    std::size_t start = 0;
    while (start <= blob.size()) {
      const std::size_t end = std::min(blob.find(';', start), blob.size());
      const std::string id(blob.substr(start, end - start));
      auto it = index.find(id);
      if (it == index.end()) throw SchemaError(where + ": unknown village '" + id + "'");
      out.push_back(it->second);
      start = end + 1;
    }
    std::sort(out.begin(), out.end());
    return out;
  };

  ConstrainedPool pool;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const std::string where = path.filename().string() + " row " + std::to_string(row);
    const auto f = split_csv(line);
    if (f.size() != 7) throw SchemaError(where + ": expected 7 fields");
    RandomizationDraw d;
    d.draw_id = static_cast<std::uint64_t>(parse_int(f[0], where + " draw_id"));
    d.allocation = Allocation(static_cast<std::uint32_t>(parse_int(f[1], where + " allocation")));
    for (std::size_t k = 0; k < 3; ++k) d.smd[k] = parse_double(f[2 + k], where + " smd");
    d.avg_smd = parse_double(f[5], where + " avg_smd");
    const auto bar = f[6].find('|');
    if (bar == std::string::npos) throw SchemaError(where + ": selection_blob lacks '|'");
    d.selection.control = parse_ids(std::string_view(f[6]).substr(0, bar), where);
    d.selection.treatment = parse_ids(std::string_view(f[6]).substr(bar + 1), where);
    if (d.selection.control.size() != d.selection.treatment.size()) {
      throw SchemaError(where + ": arms have different sizes");
    }
    d.selection.n_per_arm = static_cast<int>(d.selection.control.size());
    for (Arm arm : {Arm::kControl, Arm::kTreatment}) {
      for (auto v : d.selection.of(arm)) {
        if (d.allocation.arm_of(census.area_of(v)) != arm) {
          throw SchemaError(where + ": village " + villages[v].village_id +
                            " lies in an area of the other arm");
        }
      }
    }
    if (pool.n_per_arm == 0) pool.n_per_arm = d.selection.n_per_arm;
    if (pool.n_per_arm != d.selection.n_per_arm) throw SchemaError(where + ": inconsistent n_per_arm");
    pool.draws.push_back(std::move(d));
  }

  std::ifstream side(path.string() + ".meta.json");
  if (side) {
    try {
      nlohmann::json meta;
      side >> meta;
      pool.threshold = meta.at("threshold").get<double>();
      pool.n_attempted = meta.at("n_attempted").get<std::uint64_t>();
      pool.seed = meta.at("seed").get<std::uint64_t>();
      pool.n_infeasible = meta.value("n_infeasible", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(path.string() + ".meta.json: " + e.what());
    }
  } else {
    pool.threshold = 0.0;
    for (const auto& d : pool.draws) pool.threshold = std::max(pool.threshold, d.avg_smd);
    pool.n_attempted = pool.draws.size();
  }
  return pool;
}

}  // namespace crtsim
