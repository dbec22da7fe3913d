#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "crtsim/census.hpp"
#include "crtsim/rng.hpp"

namespace crtsim {

enum class Arm : std::uint8_t { kControl = 0, kTreatment = 1 };

const char* arm_name(Arm arm) noexcept;

/// Health-area allocation as a bitmask over the census's area order: bit a
/// set means area a is treated. Valid allocations treat exactly half of
/// the areas.
class Allocation {
 public:
  static constexpr std::size_t kAreas = Census::kHealthAreas;
  static constexpr std::size_t kPerArm = kAreas / 2;

  /// Throws ValidationError unless exactly kPerArm bits of the low kAreas
  /// bits are set and no other bit is.
  explicit Allocation(std::uint32_t treatment_mask);

  std::uint32_t treatment_mask() const noexcept { return mask_; }
  Arm arm_of(std::size_t area) const noexcept {
    return (mask_ >> area) & 1u ? Arm::kTreatment : Arm::kControl;
  }
  std::vector<std::size_t> areas_in(Arm arm) const;

  /// The same partition with arm labels swapped.
  Allocation relabeled() const { return Allocation(~mask_ & ((1u << kAreas) - 1u)); }

  friend bool operator==(const Allocation&, const Allocation&) = default;

 private:
  std::uint32_t mask_;
};

/// Selected villages (analysis-view indices) per arm, ascending.
struct VillageSelection {
  std::vector<std::uint32_t> control;
  std::vector<std::uint32_t> treatment;
  int n_per_arm = 0;

  std::span<const std::uint32_t> of(Arm arm) const noexcept {
    return arm == Arm::kTreatment ? std::span<const std::uint32_t>(treatment)
                                  : std::span<const std::uint32_t>(control);
  }
};

/// Balancing covariates, in this order, for the SMD vector.
enum class BalanceCovariate : std::size_t { kPopulation = 0, kDistance = 1, kBaselineRate = 2 };

struct RandomizationDraw {
  std::uint64_t draw_id = 0;  // attempt index that produced the draw
  Allocation allocation{0b000000111111u};
  VillageSelection selection;
  std::array<double, 3> smd{};  // |SMD| of population, distance, baseline MCV1 rate
  double avg_smd = 0.0;
};

struct ConstrainedPool {
  std::vector<RandomizationDraw> draws;
  double threshold = 0.2;
  std::uint64_t n_attempted = 0;
  std::uint64_t n_infeasible = 0;  // attempts whose allocation lacked villages
  std::uint64_t seed = 0;
  int n_per_arm = 0;

  double acceptance_rate() const noexcept {
    return n_attempted ? static_cast<double>(draws.size()) / static_cast<double>(n_attempted) : 0.0;
  }
};

/// Absolute standardized mean difference |mean_t - mean_c| / sqrt((s_t^2 +
/// s_c^2) / 2) with n-1 variances. Equal means give 0; a zero pooled SD with
/// unequal means gives +infinity. Each group needs at least two values.
double smd(std::span<const double> treated, std::span<const double> control);

/// Largest-remainder (Hamilton) apportionment of `total` seats in proportion
/// to `capacities`, never exceeding a capacity. Remainder ties go to the
/// larger capacity, then to the lower index.
std::vector<int> apportion(std::span<const int> capacities, int total);

/// Per-area village quotas (indexed by area; zero for areas in the other
/// arm) for both arms. Throws CapacityError naming the arm that cannot
/// supply n_per_arm villages.
std::vector<int> apportion_villages(const Census& census, const Allocation& allocation,
                                    int n_per_arm);

/// Uniform over the C(12, 6) = 924 allocations.
Allocation draw_allocation(Stream& rng);

/// |SMD| vector and average for a given selection.
std::array<double, 3> balance(const Census& census, const VillageSelection& selection);

/// One candidate: uniform allocation, proportional quotas, villages drawn
/// without replacement within each area, balance metrics.
RandomizationDraw draw_candidate(const Census& census, int n_per_arm, Stream& rng);

/// Runs n_attempts candidate draws (attempt i uses the substream keyed by
/// (seed, i)) and keeps those with avg_smd <= threshold, in attempt order.
/// The result does not depend on `workers` (0 = hardware concurrency).
/// Attempts whose allocation cannot supply n_per_arm villages in an arm are
/// rejected. Throws CapacityError when no allocation is feasible and
/// EmptyPoolError when nothing is accepted.
ConstrainedPool build_pool(const Census& census, int n_per_arm, std::uint64_t n_attempts,
                           double threshold, std::uint64_t seed, unsigned workers = 0);

const RandomizationDraw& sample_from_pool(const ConstrainedPool& pool, Stream& rng);

/// Pool CSV: `draw_id,allocation_bitmask,smd_pop,smd_dist,smd_mcv1,avg_smd,selection_blob`.
/// Pool metadata (threshold, attempts, seed, n_per_arm) goes to a JSON
/// sidecar `<path>.meta.json`.
void write_pool(const ConstrainedPool& pool, const Census& census,
                const std::filesystem::path& path);
ConstrainedPool load_pool(const std::filesystem::path& path, const Census& census);

}  // namespace crtsim
