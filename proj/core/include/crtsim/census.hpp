#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace crtsim {

/// One village of the baseline survey.
struct Village {
  std::string village_id;
  std::string health_area;
  std::int64_t population = 0;
  double distance_km = 0.0;  // to the nearest vaccinating health centre
  int n_children = 0;        // aged 12-24 months
  int n_mcv1 = 0;            // of those, with at least one MCV1 dose

  double baseline_rate() const noexcept {
    return static_cast<double>(n_mcv1) / static_cast<double>(n_children);
  }
};

/// Target summary statistics for one health area.
struct HealthAreaProfile {
  std::string health_area;
  int n_villages = 0;
  double distance_mean = 0, distance_sd = 0;
  double population_mean = 0, population_sd = 0;
  double children_mean = 0, children_sd = 0;
  double mcv1_rate_mean = 0, mcv1_rate_sd = 0;
};

/// Immutable baseline census. Villages are stored grouped by health area in
/// lexicographic area order; all indices handed out refer to the analysis
/// view (villages with at least `kMinChildren` children).
class Census {
 public:
  static constexpr int kMinChildren = 5;
  static constexpr std::size_t kHealthAreas = 12;

  /// Validates every village; throws SchemaError on the first violation.
  explicit Census(std::vector<Village> villages);

  std::span<const Village> all_villages() const noexcept { return all_; }
  std::span<const Village> villages() const noexcept { return analysis_; }
  std::size_t size() const noexcept { return analysis_.size(); }

  /// Distinct health areas over all villages, sorted.
  std::span<const std::string> health_areas() const noexcept { return areas_; }

  /// Analysis-view indices of the villages in area `area`.
  std::span<const std::size_t> members(std::size_t area) const { return members_.at(area); }
  std::size_t area_of(std::size_t village) const { return area_of_.at(village); }

  /// Throws SchemaError unless the census has exactly kHealthAreas areas.
  void require_full_design() const;

 private:
  std::vector<Village> all_;
  std::vector<Village> analysis_;
  std::vector<std::string> areas_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::size_t> area_of_;
};

/// Reads a census CSV with header
/// `village_id,health_area,population,distance_km,n_children,n_mcv1`.
/// When `expected_areas` is set the distinct area count must match it.
Census load_census(const std::filesystem::path& path,
                   std::optional<std::size_t> expected_areas = Census::kHealthAreas);

void write_census(const Census& census, const std::filesystem::path& path);

/// The twelve built-in health-area profiles.
std::vector<HealthAreaProfile> default_profiles();

std::vector<HealthAreaProfile> load_profiles(const std::filesystem::path& path);
void write_profiles(std::span<const HealthAreaProfile> profiles,
                    const std::filesystem::path& path);

/// Draws a synthetic census whose per-area summaries follow `profiles`.
///
/// Per area: distance ~ Normal(mean, sd) truncated below at 0.1 km;
/// children ~ negative binomial conditioned on >= 5, with parameters chosen
/// so the *conditioned* distribution has the profile's mean and SD;
/// population ~ moment-matched log-normal, rounded and floored at the
/// child count; village MCV1 rate ~ moment-matched beta clipped to
/// [0.01, 0.99], then n_mcv1 ~ Binomial(children, rate).
Census generate_synthetic_census(std::span<const HealthAreaProfile> profiles,
                                 std::uint64_t seed);

struct AreaSummary {
  HealthAreaProfile profile;
  long long total_children = 0;
  long long total_mcv1 = 0;
  double rate_median = 0, rate_q1 = 0, rate_q3 = 0;
};

struct CensusSummary {
  std::vector<AreaSummary> areas;
  long long total_children = 0;
  long long total_mcv1 = 0;
  std::size_t n_villages = 0;
};

/// Per-area descriptive statistics over the analysis view. SDs of a single
/// observation are reported as 0.
CensusSummary summarize_census(const Census& census);

/// log((y + 0.5) / (m - y + 0.5)).
double empirical_logit(int y, int m);

}  // namespace crtsim
