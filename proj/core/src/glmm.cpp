#include "crtsim/glmm.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "crtsim/errors.hpp"
#include "crtsim/glm.hpp"
#include "crtsim/stats.hpp"

namespace crtsim {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kMinLogTau = -12.0;
constexpr double kBoundaryTau2 = 1e-6;
// Relative round-off tolerated on the log-likelihood during the final Newton steps.
constexpr double kRoundoff = 1e-12;

inline double log1pexp(double x) noexcept {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Rows of each cluster, precomputed once per fit.
std::vector<std::vector<Index>> cluster_rows(const ClusteredBinomial& d) {
  std::vector<std::vector<Index>> rows(static_cast<std::size_t>(d.n_clusters));
  for (Index i = 0; i < d.x.rows(); ++i) rows[static_cast<std::size_t>(d.cluster[i])].push_back(i);
  return rows;
}

double log_choose_sum(const ClusteredBinomial& d) {
  double acc = 0.0;
  for (Index i = 0; i < d.successes.size(); ++i) {
    const double y = d.successes(i), m = d.trials(i);
    acc += std::lgamma(m + 1.0) - std::lgamma(y + 1.0) - std::lgamma(m - y + 1.0);
  }
  return acc;
}

// Binomial kernel sum_j y_j (eta_j + v) - m_j log(1 + exp(eta_j + v)).
double kernel(const ClusteredBinomial& d, const std::vector<Index>& rows, const VectorXd& lin,
              double v) {
  double acc = 0.0;
  for (Index i : rows) {
    const double e = lin(i) + v;
    acc += d.successes(i) * e - d.trials(i) * log1pexp(e);
  }
  return acc;
}

double cluster_log_integral(const ClusteredBinomial& d, const std::vector<Index>& rows,
                            const VectorXd& lin, double tau, const GaussHermite& rule,
                            const std::vector<double>& log_w) {
  const double inv_t2 = 1.0 / (tau * tau);
  auto h = [&](double v) {
    return kernel(d, rows, lin, v) - 0.5 * v * v * inv_t2 - 0.5 * std::log(2.0 * kPi * tau * tau);
  };

  // Conditional mode by safeguarded Newton; h is strictly concave.
  double v = 0.0;
  double hv = h(v);
  double curvature = 0.0;
  for (int iter = 0; iter < 100; ++iter) {
    double grad = -v * inv_t2;
    curvature = -inv_t2;
    for (Index i : rows) {
      const double mu = expit(lin(i) + v);
      grad += d.successes(i) - d.trials(i) * mu;
      curvature -= d.trials(i) * mu * (1.0 - mu);
    }
    double step = -grad / curvature;
    double next = v + step;
    double hn = h(next);
    for (int half = 0; half < 50 && hn < hv; ++half) {
      step *= 0.5;
      next = v + step;
      hn = h(next);
    }
    v = next;
    hv = hn;
    if (std::abs(step) < 1e-12 * std::max(1.0, std::abs(v))) break;
  }
  curvature = -inv_t2;
  for (Index i : rows) {
    const double mu = expit(lin(i) + v);
    curvature -= d.trials(i) * mu * (1.0 - mu);
  }
  const double s = 1.0 / std::sqrt(-curvature);

  // log sum_k w_k exp(x_k^2) exp(h(v + sqrt2 s x_k) - h(v)), stabilized.
  const std::size_t n = rule.size();
  std::vector<double> terms(n);
  double top = -INFINITY;
  for (std::size_t k = 0; k < n; ++k) {
    const double x = rule.nodes[k];
    terms[k] = log_w[k] + x * x + h(v + std::sqrt(2.0) * s * x) - hv;
    top = std::max(top, terms[k]);
  }
  double sum = 0.0;
  for (double t : terms) sum += std::exp(t - top);
  return std::log(std::sqrt(2.0) * s) + hv + top + std::log(sum);
}

struct Objective {
  const ClusteredBinomial& data;
  const GaussHermite& rule;
  std::vector<std::vector<Index>> rows;
  std::vector<double> log_w;
  double log_choose;

  Objective(const ClusteredBinomial& d, const GaussHermite& r)
      : data(d), rule(r), rows(cluster_rows(d)), log_choose(log_choose_sum(d)) {
    for (double w : rule.weights) log_w.push_back(std::log(w));
  }

  double operator()(const VectorXd& eta, double tau) const {
    const VectorXd lin = data.x * eta;
    if (tau <= 0.0) {
      double acc = log_choose;
      for (const auto& r : rows) acc += kernel(data, r, lin, 0.0);
      return acc;
    }
    double acc = log_choose;
    for (const auto& r : rows) acc += cluster_log_integral(data, r, lin, tau, rule, log_w);
    return acc;
  }

  // theta = (eta, log tau)
  double at(const VectorXd& theta) const {
    const Index p = theta.size() - 1;
    return (*this)(theta.head(p), std::exp(theta(p)));
  }

  VectorXd gradient(const VectorXd& theta) const {
    VectorXd g(theta.size());
    for (Index k = 0; k < theta.size(); ++k) {
      const double h = 1e-5 * std::max(1.0, std::abs(theta(k)));
      VectorXd up = theta, dn = theta;
      up(k) += h;
      dn(k) -= h;
      g(k) = (at(up) - at(dn)) / (2.0 * h);
    }
    return g;
  }
};

}  // namespace

const char* level_name(IccLevel level) noexcept {
  return level == IccLevel::kVillage ? "village" : "health_zone";
}

void ClusteredBinomial::validate() const {
  const Index n = x.rows();
  if (n == 0) throw ValidationError("GLMM data has no rows");
  if (successes.size() != n || trials.size() != n || static_cast<Index>(cluster.size()) != n) {
    throw ValidationError("GLMM data columns have inconsistent lengths");
  }
  if (n_clusters < 1) throw ValidationError("GLMM data needs at least one cluster");
  for (Index i = 0; i < n; ++i) {
    if (cluster[static_cast<std::size_t>(i)] < 0 || cluster[static_cast<std::size_t>(i)] >= n_clusters) {
      throw ValidationError("GLMM cluster index out of range");
    }
    if (!(trials(i) >= 1) || successes(i) < 0 || successes(i) > trials(i)) {
      throw ValidationError("GLMM row needs trials >= 1 and 0 <= successes <= trials");
    }
  }
}

std::vector<double> standardize_population(const Census& census) {
  std::vector<double> pop;
  for (const auto& v : census.villages()) pop.push_back(static_cast<double>(v.population));
  if (pop.size() < 2) throw DomainError("standardize_population: need at least two villages");
  const double m = mean(pop);
  const double sd = sample_sd(pop);
  if (sd == 0.0) throw DomainError("standardize_population: population has zero variance");
  for (double& p : pop) p = (p - m) / sd;
  return pop;
}

ClusteredBinomial baseline_glmm_data(const Census& census, IccLevel level) {
  const auto pstd = standardize_population(census);
  const auto villages = census.villages();
  const auto n = static_cast<Index>(villages.size());
  ClusteredBinomial d;
  d.x.resize(n, 3);
  d.successes.resize(n);
  d.trials.resize(n);
  d.cluster.resize(villages.size());
  for (Index i = 0; i < n; ++i) {
    const auto& v = villages[static_cast<std::size_t>(i)];
    d.x(i, 0) = 1.0;
    d.x(i, 1) = pstd[static_cast<std::size_t>(i)];
    d.x(i, 2) = v.distance_km;
    d.successes(i) = v.n_mcv1;
    d.trials(i) = v.n_children;
    d.cluster[static_cast<std::size_t>(i)] =
        level == IccLevel::kVillage ? static_cast<int>(i)
                                    : static_cast<int>(census.area_of(static_cast<std::size_t>(i)));
  }
  d.n_clusters = level == IccLevel::kVillage ? static_cast<int>(n)
                                             : static_cast<int>(census.health_areas().size());
  return d;
}

FixedLogisticFit fit_fixed_logistic(const Census& census) {
  const auto villages = census.villages();
  const auto n = static_cast<Index>(villages.size());
  MatrixXd x(n, 3);
  VectorXd y(n), m(n);
  for (Index i = 0; i < n; ++i) {
    const auto& v = villages[static_cast<std::size_t>(i)];
    x(i, 0) = 1.0;
    x(i, 1) = static_cast<double>(v.population);
    x(i, 2) = v.distance_km;
    y(i) = v.n_mcv1;
    m(i) = v.n_children;
  }
  const BinomialGlmFit glm = fit_binomial_glm(x, y, m);
  FixedLogisticFit out;
  out.coef = glm.coef;
  out.se = glm.cov_unscaled.diagonal().cwiseSqrt();
  out.ci_low = out.coef - 1.96 * out.se;
  out.ci_high = out.coef + 1.96 * out.se;
  out.loglik = glm.loglik;
  out.converged = glm.converged;
  return out;
}

double glmm_loglik(const ClusteredBinomial& data, const VectorXd& eta, double tau,
                   const GaussHermite& rule) {
  data.validate();
  return Objective(data, rule)(eta, tau);
}

GlmmFit fit_random_intercept(const ClusteredBinomial& data, int n_quad) {
  data.validate();
  if (n_quad < 9) throw DomainError("GLMM fit needs at least 9 quadrature nodes");
  const GaussHermite rule(static_cast<std::size_t>(n_quad));
  const Objective f(data, rule);
  const Index p = data.x.cols();

  // Start from the fixed-effects fit with a moderate variance.
  VectorXd theta(p + 1);
  theta.head(p) = fit_binomial_glm(data.x, data.successes, data.trials).coef;
  theta(p) = std::log(0.5);

  auto project = [&](VectorXd t) {
    t(p) = std::max(t(p), kMinLogTau);
    return t;
  };

  GlmmFit fit;
  fit.n_quad = n_quad;

  auto polish = [&](VectorXd& t, double& v, VectorXd& g) {
    const Index n = t.size();
    MatrixXd hess(n, n);
    for (Index k = 0; k < n; ++k) {
      const double h = 1e-4 * std::max(1.0, std::abs(t(k)));
      VectorXd up = t, dn = t;
      up(k) += h;
      dn(k) -= h;
      hess.col(k) = (f.gradient(up) - f.gradient(dn)) / (2.0 * h);
    }
    hess = 0.5 * (hess + hess.transpose()).eval();
    Eigen::LLT<MatrixXd> llt(-hess);
    if (llt.info() != Eigen::Success) return false;
    const VectorXd next = project(t + llt.solve(g));
    const double next_value = f.at(next);
    if (!(next_value >= v - kRoundoff * std::max(1.0, std::abs(v)))) return false;
    const VectorXd next_grad = f.gradient(next);
    if (!(next_grad.cwiseAbs().maxCoeff() < g.cwiseAbs().maxCoeff())) return false;
    t = next;
    v = next_value;
    g = next_grad;
    fit.loglik_trace.push_back(v);
    return true;
  };

  double value = f.at(theta);
  fit.loglik_trace.push_back(value);
  VectorXd grad = f.gradient(theta);
  MatrixXd inv_h = MatrixXd::Identity(p + 1, p + 1);
  for (int iter = 1; iter <= 500; ++iter) {
    fit.iterations = iter;
    const bool at_floor = theta(p) <= kMinLogTau && grad(p) <= 0.0;
    VectorXd g_eff = grad;
    if (at_floor) g_eff(p) = 0.0;
    if (g_eff.cwiseAbs().maxCoeff() < 1e-6) {
      fit.converged = true;
      break;
    }
    // Close in, the gain per step drops below the round-off of the
    // log-likelihood, so finish on the gradient with Newton steps.
    if (!at_floor && g_eff.cwiseAbs().maxCoeff() < 1e-3 && polish(theta, value, grad)) continue;
    VectorXd dir = inv_h * g_eff;  // ascent direction
    if (dir.dot(g_eff) <= 0.0) {
      inv_h.setIdentity();
      dir = g_eff;
    }
    double step = 1.0;
    VectorXd next = project(theta + dir);
    double next_value = f.at(next);
    while (!(next_value >= value + 1e-4 * step * dir.dot(g_eff)) && step > 1e-12) {
      step *= 0.5;
      next = project(theta + step * dir);
      next_value = f.at(next);
    }
    if (!(next_value >= value + 1e-4 * step * dir.dot(g_eff))) {
      if (polish(theta, value, grad)) continue;
      if (inv_h.isIdentity()) break;
      inv_h.setIdentity();
      continue;
    }
    const VectorXd next_grad = f.gradient(next);
    const VectorXd s = next - theta;
    const VectorXd yv = grad - next_grad;  // gradient of the negated objective
    const double sy = s.dot(yv);
    if (sy > 1e-12) {
      const double rho = 1.0 / sy;
      const MatrixXd eye = MatrixXd::Identity(p + 1, p + 1);
      inv_h = (eye - rho * s * yv.transpose()) * inv_h * (eye - rho * yv * s.transpose()) +
              rho * s * s.transpose();
    }
    theta = next;
    value = next_value;
    grad = next_grad;
    fit.loglik_trace.push_back(value);
  }

  fit.eta = theta.head(p);
  fit.tau2 = std::exp(2.0 * theta(p));
  fit.loglik = value;
  fit.gradient = grad;
  if (fit.tau2 < kBoundaryTau2) {
    fit.tau2 = 0.0;
    fit.boundary = true;
    fit.loglik = f(fit.eta, 0.0);
  }
  fit.icc = icc_from_tau2(fit.tau2);
  return fit;
}

GlmmFit fit_random_intercept(const Census& census, IccLevel level, int n_quad) {
  const ClusteredBinomial data = baseline_glmm_data(census, level);
  GlmmFit fit = fit_random_intercept(data, n_quad);
  fit.level = level;
  std::vector<double> pop;
  for (const auto& v : census.villages()) pop.push_back(static_cast<double>(v.population));
  const double m = mean(pop), sd = sample_sd(pop);
  fit.eta_raw = fit.eta;
  fit.eta_raw(1) = fit.eta(1) / sd;
  fit.eta_raw(0) = fit.eta(0) - fit.eta(1) * m / sd;
  return fit;
}

double icc_from_tau2(double tau2) {
  if (!(tau2 >= 0.0)) throw DomainError("tau2 must be >= 0");
  return tau2 / (kLogisticVariance + tau2);
}

std::string glmm_report_json(const GlmmFit& fit) {
  nlohmann::ordered_json j;
  j["level"] = level_name(fit.level);
  j["eta"] = std::vector<double>(fit.eta.data(), fit.eta.data() + fit.eta.size());
  if (fit.eta_raw.size() > 0) {
    j["eta_raw"] = std::vector<double>(fit.eta_raw.data(), fit.eta_raw.data() + fit.eta_raw.size());
  }
  j["tau2"] = fit.tau2;
  j["icc"] = fit.icc;
  j["loglik"] = fit.loglik;
  j["converged"] = fit.converged;
  j["boundary"] = fit.boundary;
  j["n_quad"] = fit.n_quad;
  return j.dump(2);
}

}  // namespace crtsim
