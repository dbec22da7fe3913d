#pragma once

#include <Eigen/Dense>

namespace crtsim {

/// Logit-link binomial GLM fitted by iteratively reweighted least squares.
///
/// Columns are rescaled to unit RMS internally; everything returned is on
/// the caller's scale. `watch_column` (if >= 0) marks the coefficient whose
/// magnitude beyond `divergence_bound` is treated as separation.
struct BinomialGlmOptions {
  int max_iterations = 50;
  double tolerance = 1e-8;  // on max |delta beta| (internal scale)
  int watch_column = -1;
  double divergence_bound = 15.0;
};

struct BinomialGlmFit {
  Eigen::VectorXd coef;
  Eigen::MatrixXd cov_unscaled;  // inverse Fisher information, dispersion 1
  double pearson_chi2 = 0.0;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  bool diverged = false;
};

/// Throws SingularDesignError when `x` lacks full column rank.
BinomialGlmFit fit_binomial_glm(const Eigen::MatrixXd& x, const Eigen::VectorXd& successes,
                                const Eigen::VectorXd& trials,
                                const BinomialGlmOptions& options = {});

/// Binomial log-likelihood including the log binomial coefficients.
double binomial_loglik(const Eigen::MatrixXd& x, const Eigen::VectorXd& successes,
                       const Eigen::VectorXd& trials, const Eigen::VectorXd& coef);

/// Beta regression, mean-precision form: r_j ~ Beta(mu_j phi, (1-mu_j) phi),
/// logit(mu) = x beta, log(phi) = gamma. Parameter vector theta = (beta, gamma).
struct BetaRegressionOptions {
  int max_iterations = 200;
  double tolerance = 1e-10;  // on max |delta theta| (internal scale)
  double max_log_precision = 30.0;
};

struct BetaRegressionFit {
  Eigen::VectorXd coef;       // mean model
  double log_precision = 0.0;
  Eigen::MatrixXd cov;        // inverse observed information over (beta, gamma)
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;

  double precision() const;
};

/// Responses must lie strictly inside (0, 1). Throws SingularDesignError on
/// rank deficiency and DomainError on an out-of-range response.
BetaRegressionFit fit_beta_glm(const Eigen::MatrixXd& x, const Eigen::VectorXd& r,
                               const BetaRegressionOptions& options = {});

double beta_loglik(const Eigen::MatrixXd& x, const Eigen::VectorXd& r, const Eigen::VectorXd& theta);
Eigen::VectorXd beta_score(const Eigen::MatrixXd& x, const Eigen::VectorXd& r,
                           const Eigen::VectorXd& theta);
/// Observed Hessian of beta_loglik (negative definite near a maximum).
Eigen::MatrixXd beta_hessian(const Eigen::MatrixXd& x, const Eigen::VectorXd& r,
                             const Eigen::VectorXd& theta);

}  // namespace crtsim
