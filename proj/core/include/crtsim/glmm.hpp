#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crtsim/census.hpp"
#include "crtsim/quadrature.hpp"

namespace crtsim {

enum class IccLevel { kVillage, kHealthZone };

const char* level_name(IccLevel level) noexcept;

/// Binomial rows grouped into clusters that share one Gaussian intercept.
struct ClusteredBinomial {
  Eigen::MatrixXd x;           // fixed-effect design
  Eigen::VectorXd successes;
  Eigen::VectorXd trials;
  std::vector<int> cluster;    // 0-based cluster per row
  int n_clusters = 0;

  void validate() const;
};

/// (p_j - mean) / sd with the n-1 SD, over the analysis view.
/// Throws DomainError with fewer than two villages or zero SD.
std::vector<double> standardize_population(const Census& census);

/// Baseline design (intercept, standardized population, distance) with one
/// cluster per village or per health area.
ClusteredBinomial baseline_glmm_data(const Census& census, IccLevel level);

struct FixedLogisticFit {
  Eigen::Vector3d coef;       // intercept, population (persons), distance (km)
  Eigen::Vector3d se;
  Eigen::Vector3d ci_low;     // coef -/+ 1.96 se
  Eigen::Vector3d ci_high;
  double loglik = 0.0;
  bool converged = false;
};

/// Binomial logistic regression of (Y0, m0) on raw population and distance.
FixedLogisticFit fit_fixed_logistic(const Census& census);

struct GlmmFit {
  IccLevel level = IccLevel::kVillage;
  Eigen::VectorXd eta;        // fixed effects on the fitted design's scale
  Eigen::VectorXd eta_raw;    // baseline fits only: population per person
  double tau2 = 0.0;
  double icc = 0.0;
  double loglik = 0.0;
  bool converged = false;
  bool boundary = false;      // variance collapsed to zero
  int n_quad = 0;
  int iterations = 0;
  Eigen::VectorXd gradient;
  std::vector<double> loglik_trace;  // accepted iterates, in order; non-decreasing up to 1e-12 relative
};

/// Marginal log-likelihood with each cluster integral evaluated by adaptive
/// (mode-centred) Gauss-Hermite quadrature. At tau = 0 it is the plain
/// binomial log-likelihood. Includes log binomial coefficients.
double glmm_loglik(const ClusteredBinomial& data, const Eigen::VectorXd& eta, double tau,
                   const GaussHermite& rule);

/// Maximizes glmm_loglik over (eta, log tau) by BFGS with a monotone
/// backtracking line search. Converged when the gradient max-norm drops
/// below 1e-6. A variance below 1e-6 is reported as 0 with `boundary` set.
GlmmFit fit_random_intercept(const ClusteredBinomial& data, int n_quad = 21);

/// Baseline ICC fit on the census at the village or health-area level.
GlmmFit fit_random_intercept(const Census& census, IccLevel level, int n_quad = 21);

/// tau2 / (pi^2/3 + tau2).
double icc_from_tau2(double tau2);

/// {level, eta, tau2, icc, loglik, converged, n_quad} as JSON text.
std::string glmm_report_json(const GlmmFit& fit);

}  // namespace crtsim
