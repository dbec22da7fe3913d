#include "crtsim/glm.hpp"

#include <cmath>
#include <string>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "crtsim/errors.hpp"
#include "crtsim/stats.hpp"

namespace crtsim {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ScaledDesign {
  MatrixXd x;
  VectorXd scale;  // x_internal = x_caller / scale (column-wise)
};

ScaledDesign scale_design(const MatrixXd& x) {
  if (x.rows() < x.cols()) {
    throw SingularDesignError("design has more columns (" + std::to_string(x.cols()) +
                              ") than rows (" + std::to_string(x.rows()) + ")");
  }
  ScaledDesign out{x, VectorXd(x.cols())};
  for (Index j = 0; j < x.cols(); ++j) {
    const double rms = x.col(j).norm() / std::sqrt(static_cast<double>(x.rows()));
    if (!(rms > 0.0) || !std::isfinite(rms)) {
      throw SingularDesignError("design column " + std::to_string(j) + " is zero or non-finite");
    }
    out.scale(j) = rms;
    out.x.col(j) /= rms;
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(out.x);
  qr.setThreshold(1e-10);
  if (qr.rank() < x.cols()) {
    throw SingularDesignError("design matrix is rank deficient (rank " + std::to_string(qr.rank()) +
                              " < " + std::to_string(x.cols()) + " columns)");
  }
  return out;
}

double binomial_loglik_mu(const VectorXd& y, const VectorXd& m, const VectorXd& eta) {
  double ll = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    // log mu = -log1p(exp(-eta)), log(1-mu) = -log1p(exp(eta)), computed stably
    const double e = eta(i);
    const double log_mu = e >= 0 ? -std::log1p(std::exp(-e)) : e - std::log1p(std::exp(e));
    const double log_1mu = e >= 0 ? -e - std::log1p(std::exp(-e)) : -std::log1p(std::exp(e));
    ll += std::lgamma(m(i) + 1.0) - std::lgamma(y(i) + 1.0) - std::lgamma(m(i) - y(i) + 1.0);
    if (y(i) > 0) ll += y(i) * log_mu;
    if (m(i) - y(i) > 0) ll += (m(i) - y(i)) * log_1mu;
  }
  return ll;
}

struct BetaTerms {
  double loglik = 0.0;
  VectorXd score;
  MatrixXd expected_info;
  MatrixXd hessian;
};

// Log-likelihood and derivatives at theta = (beta, gamma) for design x.
BetaTerms beta_terms(const MatrixXd& x, const VectorXd& r, const VectorXd& theta, bool derivs) {
  using boost::math::digamma;
  using boost::math::trigamma;
  const Index n = x.rows();
  const Index p = x.cols();
  const VectorXd eta = x * theta.head(p);
  const double gamma = theta(p);
  const double phi = std::exp(gamma);

  BetaTerms t;
  if (derivs) {
    t.score = VectorXd::Zero(p + 1);
    t.expected_info = MatrixXd::Zero(p + 1, p + 1);
    t.hessian = MatrixXd::Zero(p + 1, p + 1);
  }
  const double lg_phi = std::lgamma(phi);
  const double psi_phi = derivs ? digamma(phi) : 0.0;
  const double tri_phi = derivs ? trigamma(phi) : 0.0;
  for (Index i = 0; i < n; ++i) {
    const double mu = expit(eta(i));
    const double a = mu * phi;
    const double b = (1.0 - mu) * phi;
    const double log_r = std::log(r(i));
    const double log_1r = std::log1p(-r(i));
    t.loglik += lg_phi - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * log_r + (b - 1.0) * log_1r;
    if (!derivs) continue;

    const double ystar = log_r - log_1r;
    const double mustar = digamma(a) - digamma(b);
    const double g = mu * (1.0 - mu);
    const double t1 = trigamma(a);
    const double t2 = trigamma(b);
    const double resid = ystar - mustar;
    const double dphi = psi_phi - digamma(b) + mu * resid + log_1r;

    const auto xi = x.row(i).transpose();
    t.score.head(p) += phi * resid * g * xi;
    t.score(p) += phi * dphi;

    const double i_eta = phi * phi * (t1 + t2) * g * g;
    const double cross = phi * phi * g * (mu * t1 - (1.0 - mu) * t2);
    const double d2_phi = tri_phi - mu * mu * t1 - (1.0 - mu) * (1.0 - mu) * t2;

    t.expected_info.topLeftCorner(p, p) += i_eta * xi * xi.transpose();
    t.expected_info.col(p).head(p) += cross * xi;
    t.expected_info(p, p) += -phi * phi * d2_phi;

    const double h_eta = -i_eta + phi * resid * g * (1.0 - 2.0 * mu);
    const double h_cross = phi * g * (resid - phi * (mu * t1 - (1.0 - mu) * t2));
    const double h_gamma = phi * phi * d2_phi + phi * dphi;
    t.hessian.topLeftCorner(p, p) += h_eta * xi * xi.transpose();
    t.hessian.col(p).head(p) += h_cross * xi;
    t.hessian(p, p) += h_gamma;
  }
  if (derivs) {
    t.expected_info.row(p).head(p) = t.expected_info.col(p).head(p).transpose();
    t.hessian.row(p).head(p) = t.hessian.col(p).head(p).transpose();
  }
  return t;
}

// Maps internal-scale (beta~, gamma) to caller scale.
VectorXd unscale_theta(const VectorXd& theta, const VectorXd& scale) {
  VectorXd out = theta;
  out.head(scale.size()).array() /= scale.array();
  return out;
}

}  // namespace

BinomialGlmFit fit_binomial_glm(const MatrixXd& x_in, const VectorXd& y, const VectorXd& m,
                                const BinomialGlmOptions& options) {
  if (y.size() != x_in.rows() || m.size() != x_in.rows()) {
    throw DomainError("binomial GLM: response length does not match the design");
  }
  for (Index i = 0; i < y.size(); ++i) {
    if (!(m(i) >= 1.0) || y(i) < 0.0 || y(i) > m(i)) {
      throw DomainError("binomial GLM: need trials >= 1 and 0 <= successes <= trials");
    }
  }
  const ScaledDesign sd = scale_design(x_in);
  const MatrixXd& x = sd.x;
  const Index n = x.rows();
  const Index p = x.cols();

  // Start from the weighted least-squares fit to logit((y + 0.5) / (m + 1)).
  VectorXd beta(p);
  {
    VectorXd mu = (y.array() + 0.5) / (m.array() + 1.0);
    VectorXd z = (mu.array() / (1.0 - mu.array())).log();
    VectorXd w = m.array() * mu.array() * (1.0 - mu.array());
    const MatrixXd xtw = x.transpose() * w.asDiagonal();
    beta = (xtw * x).ldlt().solve(xtw * z);
  }

  auto deviance_like = [&](const VectorXd& b) { return -binomial_loglik_mu(y, m, x * b); };

  BinomialGlmFit fit;
  double objective = deviance_like(beta);
  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    fit.iterations = iter;
    const VectorXd eta = x * beta;
    VectorXd w(n), z(n);
    for (Index i = 0; i < n; ++i) {
      const double mu = expit(eta(i));
      const double v = std::max(mu * (1.0 - mu), 1e-300);
      w(i) = m(i) * v;
      z(i) = eta(i) + (y(i) / m(i) - mu) / v;
    }
    const MatrixXd xtw = x.transpose() * w.asDiagonal();
    VectorXd next = (xtw * x).ldlt().solve(xtw * z);
    if (!next.allFinite()) break;

    // Step halving keeps the likelihood from decreasing.
    double obj_next = deviance_like(next);
    for (int half = 0; half < 30 && !(obj_next <= objective + 1e-12 * std::abs(objective)); ++half) {
      next = 0.5 * (next + beta);
      obj_next = deviance_like(next);
    }
    const double change = (next - beta).cwiseAbs().maxCoeff();
    beta = next;
    objective = obj_next;

    if (options.watch_column >= 0 &&
        std::abs(beta(options.watch_column) / sd.scale(options.watch_column)) >
            options.divergence_bound) {
      fit.diverged = true;
      break;
    }
    if (change < options.tolerance) {
      fit.converged = true;
      break;
    }
  }

  const VectorXd eta = x * beta;
  VectorXd w(n);
  fit.pearson_chi2 = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double mu = expit(eta(i));
    const double v = mu * (1.0 - mu);
    w(i) = m(i) * v;
    const double resid = y(i) - m(i) * mu;
    fit.pearson_chi2 += w(i) > 0 ? resid * resid / w(i) : 0.0;
  }
  const MatrixXd info = x.transpose() * w.asDiagonal() * x;
  const MatrixXd cov_internal = info.ldlt().solve(MatrixXd::Identity(p, p));
  const VectorXd inv_scale = sd.scale.cwiseInverse();
  fit.coef = beta.cwiseProduct(inv_scale);
  fit.cov_unscaled = inv_scale.asDiagonal() * cov_internal * inv_scale.asDiagonal();
  fit.loglik = -objective;
  if (!fit.coef.allFinite() || !fit.cov_unscaled.allFinite()) fit.converged = false;
  return fit;
}

double binomial_loglik(const MatrixXd& x, const VectorXd& y, const VectorXd& m, const VectorXd& coef) {
  return binomial_loglik_mu(y, m, x * coef);
}

double BetaRegressionFit::precision() const { return std::exp(log_precision); }

double beta_loglik(const MatrixXd& x, const VectorXd& r, const VectorXd& theta) {
  return beta_terms(x, r, theta, false).loglik;
}

VectorXd beta_score(const MatrixXd& x, const VectorXd& r, const VectorXd& theta) {
  return beta_terms(x, r, theta, true).score;
}

MatrixXd beta_hessian(const MatrixXd& x, const VectorXd& r, const VectorXd& theta) {
  return beta_terms(x, r, theta, true).hessian;
}

BetaRegressionFit fit_beta_glm(const MatrixXd& x_in, const VectorXd& r,
                               const BetaRegressionOptions& options) {
  if (r.size() != x_in.rows()) throw DomainError("beta regression: response length mismatch");
  for (Index i = 0; i < r.size(); ++i) {
    if (!(r(i) > 0.0 && r(i) < 1.0)) {
      throw DomainError("beta regression: response " + std::to_string(i) + " outside (0, 1)");
    }
  }
  const ScaledDesign sd = scale_design(x_in);
  const MatrixXd& x = sd.x;
  const Index n = x.rows();
  const Index p = x.cols();

  // Starting values: least squares on logit(r), precision from the residual
  // variance mapped back through the link.
  VectorXd theta(p + 1);
  {
    const VectorXd z = (r.array() / (1.0 - r.array())).log();
    const VectorXd b = x.colPivHouseholderQr().solve(z);
    const VectorXd resid = z - x * b;
    double phi = 10.0;
    const double ss = resid.squaredNorm();
    if (n > p && ss > 0.0) {
      double acc = 0.0;
      for (Index i = 0; i < n; ++i) {
        const double mu = expit(x.row(i).dot(b));
        acc += static_cast<double>(n - p) / (ss * mu * (1.0 - mu));
      }
      phi = acc / static_cast<double>(n) - 1.0;
    }
    if (!(phi > 0.0) || !std::isfinite(phi)) phi = 10.0;
    theta.head(p) = b;
    theta(p) = std::min(std::log(phi), options.max_log_precision);
  }

  BetaRegressionFit fit;
  BetaTerms terms = beta_terms(x, r, theta, true);
  bool use_newton = false;
  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    fit.iterations = iter;
    VectorXd step;
    if (use_newton) {
      Eigen::LDLT<MatrixXd> ldlt(-terms.hessian);
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        step = ldlt.solve(terms.score);
      } else {
        use_newton = false;
      }
    }
    if (!use_newton) step = terms.expected_info.ldlt().solve(terms.score);
    if (!step.allFinite()) break;

    double scale = 1.0;
    VectorXd next = theta + step;
    next(p) = std::min(next(p), options.max_log_precision);
    double ll_next = beta_loglik(x, r, next);
    for (int half = 0; half < 40 && !(ll_next >= terms.loglik - 1e-12 * std::abs(terms.loglik));
         ++half) {
      scale *= 0.5;
      next = theta + scale * step;
      next(p) = std::min(next(p), options.max_log_precision);
      ll_next = beta_loglik(x, r, next);
    }
    const double change = (next - theta).cwiseAbs().maxCoeff();
    theta = next;
    terms = beta_terms(x, r, theta, true);
    if (change < 1e-4) use_newton = true;
    if (change < options.tolerance) {
      fit.converged = theta(p) < options.max_log_precision;
      break;
    }
  }

  VectorXd inv_scale(p + 1);
  inv_scale.head(p) = sd.scale.cwiseInverse();
  inv_scale(p) = 1.0;
  const MatrixXd cov_internal = (-terms.hessian).ldlt().solve(MatrixXd::Identity(p + 1, p + 1));
  const VectorXd raw = unscale_theta(theta, sd.scale);
  fit.coef = raw.head(p);
  fit.log_precision = raw(p);
  fit.cov = inv_scale.asDiagonal() * cov_internal * inv_scale.asDiagonal();
  fit.loglik = terms.loglik;
  if (!fit.coef.allFinite() || !fit.cov.allFinite()) fit.converged = false;
  return fit;
}

}  // namespace crtsim
