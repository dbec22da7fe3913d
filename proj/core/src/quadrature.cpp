#include "crtsim/quadrature.hpp"

#include <Eigen/Eigenvalues>

#include "crtsim/errors.hpp"

namespace crtsim {

GaussHermite::GaussHermite(std::size_t n) : nodes(n), weights(n) {
  if (n == 0) throw DomainError("Gauss-Hermite rule needs at least one node");

  // Golub-Welsch for starting values.
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n),
                                                 static_cast<Eigen::Index>(n));
  for (std::size_t i = 1; i < n; ++i) {
    const double off = std::sqrt(static_cast<double>(i) / 2.0);
    jacobi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i - 1)) = off;
    jacobi(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(i)) = off;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd& roots = solver.eigenvalues();

  // Newton polish on the orthonormal Hermite recurrence; weights from the
  // derivative at the root.
  const double pi_quarter = std::pow(kPi, -0.25);
  for (std::size_t i = 0; i < n; ++i) {
    double x = roots(static_cast<Eigen::Index>(i));
    double deriv = 1.0;
    for (int iter = 0; iter < 10; ++iter) {
      double p1 = pi_quarter, p2 = 0.0;
      for (std::size_t j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        const double jd = static_cast<double>(j);
        p1 = x * std::sqrt(2.0 / jd) * p2 - std::sqrt((jd - 1.0) / jd) * p3;
      }
      deriv = std::sqrt(2.0 * static_cast<double>(n)) * p2;
      const double step = p1 / deriv;
      x -= step;
      if (std::abs(step) < 1e-15 * std::max(1.0, std::abs(x))) break;
    }
    nodes[i] = x;
    weights[i] = 2.0 / (deriv * deriv);
  }
}

}  // namespace crtsim
