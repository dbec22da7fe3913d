#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "crtsim/dgm.hpp"
#include "crtsim/errors.hpp"
#include "crtsim/stats.hpp"
#include "fixtures.hpp"

using namespace crtsim;

namespace {

Scenario base_case(double delta = 0.0) {
  Scenario s;
  s.cer = 0.70;
  s.delta = delta;
  s.icc_v = 0.24;
  s.coef = CoefficientSet::published(2);
  s.seed = 17;
  return s;
}

const ConstrainedPool& base_pool() {
  static const ConstrainedPool pool = build_pool(testing::default_census(), 60, 20'000, 0.2, 5, 1);
  return pool;
}

double arm_mean(const std::vector<SimulatedVillage>& f, Arm arm) {
  double s = 0;
  int n = 0;
  for (const auto& v : f) {
    if (v.arm != arm) continue;
    s += static_cast<double>(v.y1) / v.m1;
    ++n;
  }
  return s / n;
}

}  // namespace

TEST_CASE("icc to variance conversion") {
  CHECK(tau2_from_icc(0.0) == 0.0);
  CHECK(tau2_from_icc(1.0 / 3.0) == doctest::Approx(kPi * kPi / 6).epsilon(1e-14));
  CHECK(tau2_from_icc(0.24) == doctest::Approx(1.0389).epsilon(1e-4));
  CHECK_THROWS_AS(tau2_from_icc(1.0), DomainError);
  CHECK_THROWS_AS(tau2_from_icc(-0.1), DomainError);
}

TEST_CASE("coefficient sets") {
  CHECK(CoefficientSet::published(2).beta_pop == 0.000370);
  CHECK(CoefficientSet::published(1).beta_dist == -0.60630);
  CHECK(CoefficientSet::published(3).label() == "3");
  CHECK(CoefficientSet::crossed(1, 3).label() == "p1d3");
  CHECK(CoefficientSet::crossed(2, 2).label() == "2");
  CHECK(CoefficientSet::custom(0, 0).label() == "custom");
  CHECK_THROWS_AS(CoefficientSet::published(4), ValidationError);
}

TEST_CASE("scenario validation") {
  Scenario s = base_case();
  s.delta = 0.3;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = base_case();
  s.n_reps = 0;
  CHECK_THROWS_AS(s.validate(), ValidationError);
}

TEST_CASE("calibration closed forms") {
  const Census& c = testing::default_census();
  Scenario s = base_case();
  s.icc_v = 0.0;
  s.coef = CoefficientSet::custom(0.0, 0.0);
  s.baseline_offset = false;
  const auto k = calibrate_intercepts(c, s);
  CHECK(k.beta0 == doctest::Approx(logit(0.70)).epsilon(1e-10));
  CHECK(k.beta0 == doctest::Approx(0.8473).epsilon(1e-4));
  CHECK(k.delta_logit == 0.0);
  CHECK(k.tau2 == 0.0);

  const auto b = calibrate_intercepts(c, base_case());
  CHECK(b.delta_logit == 0.0);
  CHECK(std::abs(b.control_rate - 0.70) <= kCalibrationTolerance);
  CHECK(b.tau2 == doctest::Approx(tau2_from_icc(0.24)));

  const auto t = calibrate_intercepts(c, base_case(0.15));
  CHECK(std::abs(t.treatment_rate - 0.85) <= kCalibrationTolerance);
  CHECK(t.delta_logit > 0);
  const auto again = calibrate_intercepts(c, base_case(0.15));
  CHECK(again.beta0 == t.beta0);
  CHECK(again.delta_logit == t.delta_logit);
}

TEST_CASE("base-case calibration against a Monte Carlo oracle") {
  const Census& c = testing::default_census();
  const Scenario s = base_case();
  const auto k = calibrate_intercepts(c, s);
  const auto offsets = village_offsets(c, s);
  std::mt19937_64 gen(123);
  std::normal_distribution<double> z(0.0, std::sqrt(k.tau2));
  const int draws = 1'000'000;
  double acc = 0;
  for (int i = 0; i < draws; ++i) {
    acc += expit(k.beta0 + z(gen) + offsets[static_cast<std::size_t>(i) % offsets.size()]);
  }
  CHECK(std::abs(acc / draws - 0.70) <= 0.001);
}

TEST_CASE("unreachable targets raise a calibration error") {
  const Census& c = testing::default_census();
  Scenario s = base_case();
  s.cer = 1e-12;
  CHECK_THROWS_AS(calibrate_intercepts(c, s), CalibrationError);
}

TEST_CASE("follow-up simulation") {
  const Census& c = testing::default_census();
  const auto& pool = base_pool();
  Scenario s = base_case();
  const auto k = calibrate_intercepts(c, s);
  Stream r1 = Stream::derive({1}), r2 = Stream::derive({1});
  const auto f1 = simulate_followup(c, pool.draws[0], k, s, r1);
  const auto f2 = simulate_followup(c, pool.draws[0], k, s, r2);
  REQUIRE(f1.size() == 120);
  bool same = true;
  for (std::size_t i = 0; i < f1.size(); ++i) {
    same = same && f1[i].y1 == f2[i].y1;
    REQUIRE(f1[i].y1 >= 0);
    REQUIRE(f1[i].y1 <= f1[i].m1);
    REQUIRE(f1[i].m1 == c.villages()[f1[i].village].n_children);
    REQUIRE(f1[i].arm == (i < 60 ? Arm::kControl : Arm::kTreatment));
  }
  CHECK(same);

  // A larger treatment offset raises every treated village's probability.
  auto bigger = k;
  bigger.delta_logit += 0.5;
  const auto off = village_offsets(c, s);
  for (auto v : pool.draws[0].selection.treatment) {
    CHECK(expit(bigger.beta0 + bigger.delta_logit + off[v]) >= expit(k.beta0 + k.delta_logit + off[v]));
  }
}

TEST_CASE("degenerate model reproduces a plain binomial") {
  const Census& c = testing::default_census();
  Scenario s = base_case();
  s.icc_v = 0.0;
  s.coef = CoefficientSet::custom(0.0, 0.0);
  s.baseline_offset = false;
  const auto k = calibrate_intercepts(c, s);
  long long y = 0, m = 0;
  for (std::uint64_t rep = 0; rep < 2000; ++rep) {
    Stream rng = Stream::derive({4, rep});
    for (const auto& v : simulate_followup(c, base_pool().draws[rep % base_pool().draws.size()], k, s, rng)) {
      y += v.y1;
      m += v.m1;
    }
  }
  const double p = static_cast<double>(y) / static_cast<double>(m);
  CHECK(std::abs(p - 0.70) <= 4 * std::sqrt(0.21 / static_cast<double>(m)));
}

TEST_CASE("simulated arm rates track the calibration targets") {
  const Census& c = testing::default_census();
  const auto& pool = base_pool();
  for (double cer : {0.55, 0.70}) {
    for (double delta : {0.0, 0.15}) {
      Scenario s = base_case(delta);
      s.cer = cer;
      const auto k = calibrate_intercepts(c, s);
      const int reps = 4000;
      std::vector<double> ctrl, diff;
      for (std::uint64_t rep = 0; rep < reps; ++rep) {
        Stream pick = Stream::derive({6, rep, 0});
        Stream rng = Stream::derive({6, rep, 1});
        const auto f = simulate_followup(c, sample_from_pool(pool, pick), k, s, rng);
        ctrl.push_back(arm_mean(f, Arm::kControl));
        diff.push_back(arm_mean(f, Arm::kTreatment) - arm_mean(f, Arm::kControl));
      }
      const double se_c = sample_sd(ctrl) / std::sqrt(reps);
      const double se_d = sample_sd(diff) / std::sqrt(reps);
      INFO("cer " << cer << " delta " << delta << " control " << mean(ctrl) << " diff " << mean(diff));
      CHECK(std::abs(mean(ctrl) - cer) <= 3 * se_c + 2 * kCalibrationTolerance);
      CHECK(std::abs(mean(diff) - delta) <= 3 * se_d + 2 * kCalibrationTolerance);
    }
  }
}
