#include "crtsim/estimators.hpp"

#include <cmath>
#include <string>

#include "crtsim/errors.hpp"
#include "crtsim/glm.hpp"
#include "crtsim/stats.hpp"

namespace crtsim {
namespace {

TestResult decide(Method method, double estimate, double se, bool converged, double critical_z) {
  TestResult t;
  t.method = method;
  t.estimate = estimate;
  t.se = se;
  t.converged = converged && std::isfinite(estimate) && std::isfinite(se) && se > 0.0;
  t.z = t.converged ? estimate / se : 0.0;
  t.reject = t.converged && t.z > critical_z;
  return t;
}

}  // namespace

AnalysisDataset::AnalysisDataset(std::vector<AnalysisRow> rows) : rows_(std::move(rows)) {
  int n_treated = 0, n_control = 0;
  for (const auto& r : rows_) {
    if (r.m1 < 1) throw ValidationError("analysis dataset: m1 must be >= 1");
    if (r.y1 < 0 || r.y1 > r.m1) throw ValidationError("analysis dataset: y1 outside [0, m1]");
    if (r.treated != 0 && r.treated != 1) throw ValidationError("analysis dataset: arm must be 0/1");
    (r.treated ? n_treated : n_control)++;
  }
  if (n_treated < 2 || n_control < 2) {
    throw ValidationError("analysis dataset needs at least two villages per arm");
  }
}

AnalysisDataset AnalysisDataset::from_followup(const Census& census,
                                               std::span<const SimulatedVillage> followup) {
  const auto villages = census.villages();
  std::vector<AnalysisRow> rows;
  rows.reserve(followup.size());
  for (const auto& s : followup) {
    const auto& v = villages[s.village];
    rows.push_back({s.y1, s.m1, s.arm == Arm::kTreatment ? 1 : 0, v.baseline_rate(),
                    static_cast<double>(v.population), v.distance_km});
  }
  return AnalysisDataset(std::move(rows));
}

Eigen::MatrixXd AnalysisDataset::design() const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows_.size()), 6);
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const auto& r = rows_[i];
    const auto k = static_cast<Eigen::Index>(i);
    x(k, 0) = 1.0;
    x(k, 1) = r.treated;
    x(k, 2) = r.baseline_rate;
    x(k, 3) = r.population;
    x(k, 4) = r.distance_km;
    x(k, 5) = r.population * r.distance_km;
  }
  return x;
}

AnalysisDataset AnalysisDataset::relabeled() const {
  auto rows = rows_;
  for (auto& r : rows) r.treated = 1 - r.treated;
  return AnalysisDataset(std::move(rows));
}

std::string_view method_name(Method m) noexcept {
  switch (m) {
    case Method::kNaive:
      return "naive";
    case Method::kQuasiBinomial:
      return "quasibinomial";
    case Method::kBeta:
      return "beta";
  }
  return "unknown";
}

TestResult naive_wald(const AnalysisDataset& data, double critical_z) {
  std::vector<double> t, c;
  for (const auto& r : data.rows()) {
    (r.treated ? t : c).push_back(static_cast<double>(r.y1) / r.m1);
  }
  const double estimate = mean(t) - mean(c);
  const double se = std::sqrt(sample_variance(t) / static_cast<double>(t.size()) +
                              sample_variance(c) / static_cast<double>(c.size()));
  TestResult out;
  out.method = Method::kNaive;
  out.estimate = estimate;
  out.se = se;
  out.converged = true;
  if (se == 0.0) {
    // Both arms constant: no evidence unless the arm means differ.
    out.z = estimate == 0.0 ? 0.0 : std::copysign(INFINITY, estimate);
  } else {
    out.z = estimate / se;
  }
  out.reject = out.z > critical_z;
  return out;
}

TestResult fit_quasibinomial(const AnalysisDataset& data, double critical_z) {
  const Eigen::MatrixXd x = data.design();
  const auto n = x.rows();
  Eigen::VectorXd y(n), m(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i) = data.rows()[static_cast<std::size_t>(i)].y1;
    m(i) = data.rows()[static_cast<std::size_t>(i)].m1;
  }
  BinomialGlmOptions opt;
  opt.watch_column = static_cast<int>(AnalysisDataset::kTreatmentColumn);
  const BinomialGlmFit fit = fit_binomial_glm(x, y, m, opt);
  const double dispersion = fit.pearson_chi2 / static_cast<double>(n - x.cols());
  const auto k = AnalysisDataset::kTreatmentColumn;
  const double se = std::sqrt(fit.cov_unscaled(k, k) * dispersion);
  return decide(Method::kQuasiBinomial, fit.coef(k), se, fit.converged && !fit.diverged,
                critical_z);
}

TestResult fit_beta_regression(const AnalysisDataset& data, double critical_z) {
  const Eigen::MatrixXd x = data.design();
  const auto n = x.rows();
  Eigen::VectorXd r(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = data.rows()[static_cast<std::size_t>(i)];
    r(i) = boundary_transform(static_cast<double>(row.y1) / row.m1, data.size());
    if (!(r(i) > 0.0 && r(i) < 1.0)) {
      throw ComputeError("boundary transform left a response outside (0, 1)");
    }
  }
  const BetaRegressionFit fit = fit_beta_glm(x, r);
  const auto k = AnalysisDataset::kTreatmentColumn;
  const double var = fit.cov(k, k);
  const double se = var > 0.0 ? std::sqrt(var) : NAN;
  return decide(Method::kBeta, fit.coef(k), se, fit.converged, critical_z);
}

TestResult run_method(Method method, const AnalysisDataset& data, double critical_z) {
  switch (method) {
    case Method::kNaive:
      return naive_wald(data, critical_z);
    case Method::kQuasiBinomial:
      return fit_quasibinomial(data, critical_z);
    case Method::kBeta:
      return fit_beta_regression(data, critical_z);
  }
  throw ValidationError("unknown method");
}

double boundary_transform(double r, std::size_t n_obs) {
  if (n_obs < 1) throw DomainError("boundary_transform: n_obs must be >= 1");
  const double n = static_cast<double>(n_obs);
  return (r * (n - 1.0) + 0.5) / n;
}

}  // namespace crtsim
