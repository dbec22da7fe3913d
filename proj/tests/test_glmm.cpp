#include <doctest.h>

#include <cmath>
#include <random>

#include <json.hpp>

#include "crtsim/dgm.hpp"
#include "crtsim/errors.hpp"
#include "crtsim/glm.hpp"
#include "crtsim/glmm.hpp"
#include "crtsim/stats.hpp"
#include "fixtures.hpp"

using namespace crtsim;
using testing::simulate_village_data;
using Eigen::VectorXd;

namespace {

// Small grouped data: 5 clusters of 3 rows.
ClusteredBinomial small_data() {
  ClusteredBinomial d;
  d.x.resize(15, 2);
  d.successes.resize(15);
  d.trials.resize(15);
  const int y[15] = {3, 5, 4, 9, 8, 10, 1, 2, 0, 6, 7, 5, 4, 3, 6};
  for (int i = 0; i < 15; ++i) {
    d.x(i, 0) = 1.0;
    d.x(i, 1) = (i % 3) - 1.0;
    d.successes[i] = y[i];
    d.trials[i] = 10;
    d.cluster.push_back(i / 3);
  }
  d.n_clusters = 5;
  return d;
}

double log_choose(double n, double k) {
  return std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1);
}

// Marginal log-likelihood by a wide trapezoid rule, cluster by cluster.
double trapezoid_loglik(const ClusteredBinomial& d, const VectorXd& eta, double tau) {
  const VectorXd lin = d.x * eta;
  double total = 0;
  for (int c = 0; c < d.n_clusters; ++c) {
    const int steps = 20000;
    const double lo = -12 * tau, hi = 12 * tau, h = (hi - lo) / steps;
    double acc = 0;
    for (int s = 0; s <= steps; ++s) {
      const double a = lo + s * h;
      double ll = 0;
      for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
        if (d.cluster[static_cast<std::size_t>(i)] != c) continue;
        const double p = expit(lin[i] + a);
        ll += log_choose(d.trials[i], d.successes[i]) + d.successes[i] * std::log(p) +
              (d.trials[i] - d.successes[i]) * std::log1p(-p);
      }
      const double w = (s == 0 || s == steps) ? 0.5 : 1.0;
      acc += w * std::exp(ll - 0.5 * a * a / (tau * tau)) / (tau * std::sqrt(2 * kPi));
    }
    total += std::log(acc * h);
  }
  return total;
}

}  // namespace

TEST_CASE("ICC conversions are mutual inverses") {
  for (double icc : {0.0, 0.01, 0.048, 0.24, 1.0 / 3.0, 0.9}) {
    CHECK(std::abs(icc_from_tau2(tau2_from_icc(icc)) - icc) <= 1e-12);
  }
  for (double t2 : {0.0, 0.1, 1.0389, 5.0}) {
    CHECK(std::abs(tau2_from_icc(icc_from_tau2(t2)) - t2) <= 1e-12 * std::max(1.0, t2));
  }
}

TEST_CASE("adaptive quadrature matches a trapezoid oracle") {
  const auto d = small_data();
  VectorXd eta(2);
  eta << 0.2, 0.4;
  const GaussHermite rule(21);
  for (double tau : {0.3, 1.0, 2.5}) {
    CHECK(glmm_loglik(d, eta, tau, rule) == doctest::Approx(trapezoid_loglik(d, eta, tau)).epsilon(1e-8));
  }
}

TEST_CASE("zero variance reduces to the binomial likelihood") {
  const auto d = small_data();
  VectorXd eta(2);
  eta << -0.1, 0.7;
  CHECK(glmm_loglik(d, eta, 0.0, GaussHermite(21)) ==
        doctest::Approx(binomial_loglik(d.x, d.successes, d.trials, eta)).epsilon(1e-14));
}

TEST_CASE("node count convergence") {
  const auto d = simulate_village_data(1.0389, 1);
  VectorXd eta(2);
  eta << 1.0, 0.3;
  const double l21 = glmm_loglik(d, eta, 1.02, GaussHermite(21));
  const double l41 = glmm_loglik(d, eta, 1.02, GaussHermite(41));
  CHECK(std::abs(l21 - l41) < 1e-8 * std::abs(l41));
  const auto f15 = fit_random_intercept(d, 15);
  const auto f31 = fit_random_intercept(d, 31);
  CHECK(f15.tau2 == doctest::Approx(f31.tau2).epsilon(1e-5));
  CHECK_THROWS_AS(fit_random_intercept(d, 5), DomainError);
}

TEST_CASE("random-intercept fit recovers the village ICC") {
  const double tau2 = tau2_from_icc(0.24);
  CHECK(tau2 == doctest::Approx(1.0389).epsilon(1e-4));
  double icc = 0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    const auto fit = fit_random_intercept(simulate_village_data(tau2, 100 + s), 21);
    INFO("seed " << s << " iterations " << fit.iterations << " gradient " << fit.gradient.transpose()
                 << " tau2 " << fit.tau2);
    REQUIRE(fit.converged);
    CHECK(fit.gradient.cwiseAbs().maxCoeff() < 1e-6);
    for (std::size_t k = 1; k < fit.loglik_trace.size(); ++k) {
      REQUIRE(fit.loglik_trace[k] >= fit.loglik_trace[k - 1] - 1e-12 * std::abs(fit.loglik_trace[k - 1]));
    }
    CHECK(fit.loglik == fit.loglik_trace.back());
    icc += fit.icc / seeds;
  }
  CHECK(std::abs(icc - 0.24) <= 0.06);
}

TEST_CASE("no extra variation puts the variance on the boundary") {
  ClusteredBinomial d = small_data();
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) d.successes[i] = 5;
  const auto fit = fit_random_intercept(d, 21);
  CHECK(fit.converged);
  CHECK(fit.boundary);
  CHECK(fit.tau2 == 0.0);
  CHECK(fit.icc == 0.0);
  CHECK(std::abs(fit.eta[0]) < 1e-6);
}

TEST_CASE("baseline fits on the census") {
  const Census& c = testing::default_census();
  const auto z = standardize_population(c);
  CHECK(std::abs(mean(z)) < 1e-12);
  CHECK(sample_sd(z) == doctest::Approx(1.0).epsilon(1e-12));

  const auto v = baseline_glmm_data(c, IccLevel::kVillage);
  CHECK(v.n_clusters == static_cast<int>(c.size()));
  const auto h = baseline_glmm_data(c, IccLevel::kHealthZone);
  CHECK(h.n_clusters == 12);

  const auto fixed = fit_fixed_logistic(c);
  CHECK(fixed.converged);
  for (int k = 0; k < 3; ++k) {
    CHECK(fixed.ci_low[k] == doctest::Approx(fixed.coef[k] - 1.96 * fixed.se[k]));
    CHECK(fixed.ci_high[k] == doctest::Approx(fixed.coef[k] + 1.96 * fixed.se[k]));
  }

  const auto fit = fit_random_intercept(c, IccLevel::kHealthZone, 21);
  CHECK(fit.converged);
  CHECK(fit.icc == doctest::Approx(icc_from_tau2(fit.tau2)));
  REQUIRE(fit.eta_raw.size() == 3);
  const double sd = sample_sd(std::vector<double>([&] {
    std::vector<double> p;
    for (const auto& x : c.villages()) p.push_back(static_cast<double>(x.population));
    return p;
  }()));
  CHECK(fit.eta_raw[1] == doctest::Approx(fit.eta[1] / sd));

  const auto json = nlohmann::json::parse(glmm_report_json(fit));
  for (const char* key : {"level", "eta", "tau2", "icc", "loglik", "converged", "n_quad"}) {
    CHECK(json.contains(key));
  }
  CHECK(json["level"] == "health_zone");
}
