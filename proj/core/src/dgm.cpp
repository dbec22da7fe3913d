#include "crtsim/dgm.hpp"

#include <cmath>
#include <random>

#include "crtsim/errors.hpp"
#include "crtsim/format.hpp"
#include "crtsim/stats.hpp"

namespace crtsim {
namespace {

constexpr double kInterceptBound = 20.0;

double offset_of(const Village& v, const Scenario& scenario) {
  double x = scenario.coef.beta_pop * static_cast<double>(v.population) +
             scenario.coef.beta_dist * v.distance_km;
  if (scenario.baseline_offset) x += empirical_logit(v.n_mcv1, v.n_children);
  return x;
}

// Intercept at which marginal_rate hits `target`, by bisection.
double solve_intercept(std::span<const double> offsets, double tau2, const GaussHermite& rule,
                       double target, const char* arm) {
  double lo = -kInterceptBound;
  double hi = kInterceptBound;
  const double r_lo = marginal_rate(offsets, lo, tau2, rule);
  const double r_hi = marginal_rate(offsets, hi, tau2, rule);
  if (!(target >= r_lo && target <= r_hi)) {
    throw CalibrationError(std::string(arm) + " target rate " + format_double(target) +
                           " is unreachable with an intercept in [-20, 20] (reachable range [" +
                           format_double(r_lo) + ", " + format_double(r_hi) + "])");
  }
  for (int iter = 0; iter < 200 && hi - lo > 1e-13; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (marginal_rate(offsets, mid, tau2, rule) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

std::string CoefficientSet::label() const {
  if (pop_index == 0 || dist_index == 0) return "custom";
  if (pop_index == dist_index) return std::to_string(pop_index);
  return "p" + std::to_string(pop_index) + "d" + std::to_string(dist_index);
}

CoefficientSet CoefficientSet::published(int set) { return crossed(set, set); }

CoefficientSet CoefficientSet::crossed(int pop_index, int dist_index) {
  if (pop_index < 1 || pop_index > 3 || dist_index < 1 || dist_index > 3) {
    throw ValidationError("coefficient set indices must be 1, 2 or 3");
  }
  return {kBetaPop[pop_index - 1], kBetaDist[dist_index - 1], pop_index, dist_index};
}

CoefficientSet CoefficientSet::custom(double beta_pop, double beta_dist) {
  return {beta_pop, beta_dist, 0, 0};
}

void Scenario::validate() const {
  auto fail = [&](const std::string& why) {
    throw ValidationError("scenario " + std::to_string(id) + ": " + why);
  };
  if (!(cer > 0.0 && cer < 1.0)) fail("cer must lie in (0, 1)");
  if (!(delta >= 0.0) || !(cer + delta < 1.0)) fail("need delta >= 0 and cer + delta < 1");
  if (n_per_arm < 2) fail("n_per_arm must be >= 2");
  if (!(icc_v >= 0.0 && icc_v < 1.0)) fail("icc_v must lie in [0, 1)");
  if (n_reps < 1) fail("n_reps must be >= 1");
  if (!std::isfinite(critical_z)) fail("critical_z must be finite");
}

double tau2_from_icc(double icc) {
  if (!(icc >= 0.0 && icc < 1.0)) throw DomainError("ICC must lie in [0, 1)");
  return icc * kLogisticVariance / (1.0 - icc);
}

std::vector<double> village_offsets(const Census& census, const Scenario& scenario) {
  std::vector<double> out;
  out.reserve(census.size());
  for (const auto& v : census.villages()) out.push_back(offset_of(v, scenario));
  return out;
}

double marginal_rate(std::span<const double> offsets, double intercept, double tau2,
                     const GaussHermite& rule) {
  const double sd = std::sqrt(tau2);
  double acc = 0.0;
  for (double off : offsets) {
    const double eta = intercept + off;
    acc += rule.expect_normal([eta](double a) { return expit(eta + a); }, sd);
  }
  return acc / static_cast<double>(offsets.size());
}

CalibratedIntercepts calibrate_intercepts(const Census& census, const Scenario& scenario) {
  scenario.validate();
  static const GaussHermite rule(kCalibrationNodes);
  const auto offsets = village_offsets(census, scenario);

  CalibratedIntercepts out;
  out.tau2 = tau2_from_icc(scenario.icc_v);
  out.beta0 = solve_intercept(offsets, out.tau2, rule, scenario.cer, "control");
  out.control_rate = marginal_rate(offsets, out.beta0, out.tau2, rule);
  if (scenario.delta == 0.0) {
    out.delta_logit = 0.0;
  } else {
    const double treated = solve_intercept(offsets, out.tau2, rule,
                                           scenario.cer + scenario.delta, "treatment");
    out.delta_logit = treated - out.beta0;
  }
  out.treatment_rate = marginal_rate(offsets, out.beta0 + out.delta_logit, out.tau2, rule);

  if (std::abs(out.control_rate - scenario.cer) > kCalibrationTolerance ||
      std::abs(out.treatment_rate - (scenario.cer + scenario.delta)) > kCalibrationTolerance) {
    throw CalibrationError("calibration missed its targets for scenario " +
                           std::to_string(scenario.id));
  }
  return out;
}

std::vector<SimulatedVillage> simulate_followup(const Census& census,
                                                const RandomizationDraw& draw,
                                                const CalibratedIntercepts& calib,
                                                const Scenario& scenario, Stream& rng) {
  const auto villages = census.villages();
  std::normal_distribution<double> random_intercept(0.0, std::sqrt(calib.tau2));
  std::vector<SimulatedVillage> out;
  out.reserve(draw.selection.control.size() + draw.selection.treatment.size());
  for (Arm arm : {Arm::kControl, Arm::kTreatment}) {
    const double shift = calib.beta0 + (arm == Arm::kTreatment ? calib.delta_logit : 0.0);
    for (std::uint32_t j : draw.selection.of(arm)) {
      if (j >= villages.size()) throw ValidationError("draw references a village outside the census");
      const auto& v = villages[j];
      double eta = shift + offset_of(v, scenario);
      if (calib.tau2 > 0.0) eta += random_intercept(rng);
      std::binomial_distribution<int> binom(v.n_children, expit(eta));
      out.push_back({j, arm, v.n_children, binom(rng)});
    }
  }
  return out;
}

}  // namespace crtsim
