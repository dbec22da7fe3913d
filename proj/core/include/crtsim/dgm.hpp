#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "crtsim/census.hpp"
#include "crtsim/quadrature.hpp"
#include "crtsim/randomization.hpp"
#include "crtsim/rng.hpp"

namespace crtsim {

/// Covariate effects of the outcome model: logit per person and per km.
struct CoefficientSet {
  double beta_pop = 0.0;
  double beta_dist = 0.0;
  int pop_index = 0;   // 1..3 into the published values, 0 if custom
  int dist_index = 0;

  /// "2" for a matched set, "p1d3" for a crossed pair, "custom" otherwise.
  std::string label() const;

  /// Published values: index 1 = lower 95% limit, 2 = point estimate,
  /// 3 = upper 95% limit.
  static CoefficientSet published(int set);
  static CoefficientSet crossed(int pop_index, int dist_index);
  static CoefficientSet custom(double beta_pop, double beta_dist);

  static constexpr double kBetaPop[3] = {0.000268, 0.000370, 0.0004966};
  static constexpr double kBetaDist[3] = {-0.60630, -0.0867, -0.0345};
};

/// One cell of the simulation grid.
struct Scenario {
  std::size_t id = 0;
  double cer = 0.70;    // control-arm follow-up MCV1 rate
  double delta = 0.0;   // absolute improvement in the treated arm
  int n_per_arm = 60;
  CoefficientSet coef = CoefficientSet::published(2);
  double icc_v = 0.24;
  int n_reps = 1;
  double critical_z = 1.695;
  std::uint64_t seed = 0;
  bool baseline_offset = true;  // include the empirical-logit baseline term

  /// Throws ValidationError when the scenario is not simulable.
  void validate() const;
};

struct CalibratedIntercepts {
  double beta0 = 0.0;
  double delta_logit = 0.0;
  double tau2 = 0.0;
  double control_rate = 0.0;    // achieved marginal rates
  double treatment_rate = 0.0;
};

struct SimulatedVillage {
  std::uint32_t village = 0;  // analysis-view index
  Arm arm = Arm::kControl;
  int m1 = 0;
  int y1 = 0;
};

inline constexpr std::size_t kCalibrationNodes = 41;
inline constexpr double kCalibrationTolerance = 1e-4;

/// Random-intercept variance giving latent-scale ICC `icc`:
/// icc * (pi^2/3) / (1 - icc).
double tau2_from_icc(double icc);

/// Fixed part of each analysis village's linear predictor, excluding the
/// intercept and treatment offset: elogit(Y0, m0) + b_pop p + b_dist d.
std::vector<double> village_offsets(const Census& census, const Scenario& scenario);

/// Census-average E_alpha[expit(intercept + alpha + offset_j)] with
/// alpha ~ N(0, tau2), by Gauss-Hermite quadrature.
double marginal_rate(std::span<const double> offsets, double intercept, double tau2,
                     const GaussHermite& rule);

/// Solves for the control intercept and the treatment logit offset that
/// make the census-marginal village rates equal cer and cer + delta.
/// Throws CalibrationError when a target needs an intercept outside
/// [-20, 20].
CalibratedIntercepts calibrate_intercepts(const Census& census, const Scenario& scenario);

/// Follow-up outcomes for the villages of `draw` (control first, then
/// treatment, each ascending): m1 = m0, fresh alpha_j ~ N(0, tau2),
/// y1 ~ Binomial(m1, expit(beta0 + delta_logit*treated + alpha_j + offset_j)).
std::vector<SimulatedVillage> simulate_followup(const Census& census,
                                                const RandomizationDraw& draw,
                                                const CalibratedIntercepts& calib,
                                                const Scenario& scenario, Stream& rng);

}  // namespace crtsim
