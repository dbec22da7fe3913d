#include "crtsim/closed_form.hpp"

#include <cmath>
#include <fstream>

#include "crtsim/errors.hpp"
#include "crtsim/format.hpp"
#include "crtsim/stats.hpp"

namespace crtsim {
namespace {

double variance_sum(double pi0, double pi1) {
  return pi0 * (1.0 - pi0) + pi1 * (1.0 - pi1);
}

void check_common(int c, double pi0, double pi1, double icc, double alpha) {
  if (c < 2) throw ValidationError("clusters per arm must be >= 2");
  if (!(pi0 > 0.0 && pi0 < 1.0) || !(pi1 > 0.0 && pi1 < 1.0)) {
    throw ValidationError("proportions must lie strictly inside (0, 1)");
  }
  if (!(icc >= 0.0 && icc < 1.0)) throw ValidationError("ICC must lie in [0, 1)");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
}

}  // namespace

void PowerInputs::validate() const {
  if (!(m >= 1.0) || !std::isfinite(m)) throw ValidationError("cluster size m must be >= 1");
  check_common(c, pi0, pi1, icc, alpha);
}

double cluster_size(double villages_per_arm, double children_per_village, int n_clusters) {
  if (!(villages_per_arm > 0) || !(children_per_village > 0) || n_clusters < 1) {
    throw ValidationError("cluster_size: all inputs must be positive");
  }
  return 2.0 * villages_per_arm * children_per_village / n_clusters;
}

double power(const PowerInputs& in) {
  in.validate();
  const double diff = in.pi0 - in.pi1;
  const double design_effect = 1.0 + (in.m - 1.0) * in.icc;
  const double z_beta = std::sqrt(in.m * (in.c - 1) * diff * diff /
                                  (variance_sum(in.pi0, in.pi1) * design_effect)) -
                        normal_quantile(1.0 - in.alpha);
  return normal_cdf(z_beta);
}

PlateauLimit power_plateau_limit(int c, double pi0, double pi1, double icc, double alpha) {
  check_common(c, pi0, pi1, icc, alpha);
  if (icc == 0.0) return {1.0, true};
  const double diff = pi0 - pi1;
  const double z_beta = std::sqrt((c - 1) * diff * diff / (variance_sum(pi0, pi1) * icc)) -
                        normal_quantile(1.0 - alpha);
  return {normal_cdf(z_beta), false};
}

void write_power_curve(const PowerInputs& base, std::span<const double> sizes,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "m,c,pi0,pi1,icc,alpha,power\n";
  for (double m : sizes) {
    PowerInputs in = base;
    in.m = m;
    out << format_double(m) << ',' << in.c << ',' << format_double(in.pi0) << ','
        << format_double(in.pi1) << ',' << format_double(in.icc) << ','
        << format_double(in.alpha) << ',' << format_double(power(in)) << '\n';
  }
}

}  // namespace crtsim
