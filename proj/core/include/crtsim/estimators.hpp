#pragma once

#include <array>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "crtsim/census.hpp"
#include "crtsim/dgm.hpp"

namespace crtsim {

/// One row per sampled village at follow-up.
struct AnalysisRow {
  int y1 = 0;
  int m1 = 1;
  int treated = 0;            // arm indicator a_j
  double baseline_rate = 0;   // Y0 / m0
  double population = 0;
  double distance_km = 0;
};

class AnalysisDataset {
 public:
  /// Throws ValidationError unless each arm has >= 2 villages and m1 >= 1.
  explicit AnalysisDataset(std::vector<AnalysisRow> rows);

  static AnalysisDataset from_followup(const Census& census,
                                       std::span<const SimulatedVillage> followup);

  std::span<const AnalysisRow> rows() const noexcept { return rows_; }
  std::size_t size() const noexcept { return rows_.size(); }

  /// Columns: intercept, a, baseline rate, p, d, p*d.
  Eigen::MatrixXd design() const;

  /// Same data with the arm indicator flipped.
  AnalysisDataset relabeled() const;

  static constexpr Eigen::Index kTreatmentColumn = 1;

 private:
  std::vector<AnalysisRow> rows_;
};

enum class Method { kNaive = 0, kQuasiBinomial = 1, kBeta = 2 };
inline constexpr std::array<Method, 3> kMethods = {Method::kQuasiBinomial, Method::kBeta,
                                                   Method::kNaive};
std::string_view method_name(Method m) noexcept;

struct TestResult {
  Method method = Method::kNaive;
  double estimate = 0.0;  // risk difference (naive) or logit coefficient
  double se = 0.0;
  double z = 0.0;
  bool reject = false;    // z > critical_z and converged
  bool converged = false;
};

/// Welch-form z test on unweighted village proportions, one-sided.
TestResult naive_wald(const AnalysisDataset& data, double critical_z);

/// Logit binomial GLM with prior weights m1 and Pearson dispersion
/// chi2 / (n - 6); Wald test on the arm coefficient.
TestResult fit_quasibinomial(const AnalysisDataset& data, double critical_z);

/// Mean-precision beta regression on boundary-transformed proportions;
/// Wald test on the arm coefficient with observed-information SE.
TestResult fit_beta_regression(const AnalysisDataset& data, double critical_z);

TestResult run_method(Method method, const AnalysisDataset& data, double critical_z);

/// (r (n - 1) + 0.5) / n, mapping [0, 1] into (0, 1).
double boundary_transform(double r, std::size_t n_obs);

}  // namespace crtsim
