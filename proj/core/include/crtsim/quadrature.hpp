#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "crtsim/stats.hpp"

namespace crtsim {

/// Gauss-Hermite rule for integrals of the form  int f(x) exp(-x^2) dx.
struct GaussHermite {
  std::vector<double> nodes;    // ascending
  std::vector<double> weights;

  explicit GaussHermite(std::size_t n);

  std::size_t size() const noexcept { return nodes.size(); }

  /// E[f(Z)] for Z ~ N(0, sd^2).
  template <class F>
  double expect_normal(F&& f, double sd) const {
    if (sd == 0.0) return f(0.0);
    const double scale = std::sqrt(2.0) * sd;
    double acc = 0.0;
    for (std::size_t k = 0; k < nodes.size(); ++k) acc += weights[k] * f(scale * nodes[k]);
    return acc / std::sqrt(kPi);
  }
};

}  // namespace crtsim
