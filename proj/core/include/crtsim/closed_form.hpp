#pragma once

#include <filesystem>
#include <span>

namespace crtsim {

/// Inputs to the equal-cluster-size power formula.
struct PowerInputs {
  double m = 0.0;     // individuals per cluster
  int c = 0;          // clusters per arm
  double pi0 = 0.0;
  double pi1 = 0.0;
  double icc = 0.0;
  double alpha = 0.05;  // one-sided

  /// Throws ValidationError on inputs outside the formula's domain.
  void validate() const;
};

/// Children per health-area cluster when `villages_per_arm` villages of
/// `children_per_village` children are spread over `n_clusters` clusters.
double cluster_size(double villages_per_arm, double children_per_village = 14.0,
                    int n_clusters = 12);

/// Phi( sqrt(m (c-1) (pi0-pi1)^2 / ([pi0(1-pi0) + pi1(1-pi1)] (1 + (m-1) icc)))
///      - z_{1-alpha} ).
double power(const PowerInputs& in);

struct PlateauLimit {
  double power = 1.0;
  bool unbounded = false;  // icc == 0: power -> 1 as m grows
};

/// Limit of power() as m -> infinity.
PlateauLimit power_plateau_limit(int c, double pi0, double pi1, double icc, double alpha);

/// Writes `m,c,pi0,pi1,icc,alpha,power` rows for every m in `sizes`.
void write_power_curve(const PowerInputs& base, std::span<const double> sizes,
                       const std::filesystem::path& path);

}  // namespace crtsim
