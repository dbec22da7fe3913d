#include "fixtures.hpp"

#include <cmath>
#include <cstdlib>

#include "crtsim/stats.hpp"

namespace testing {

std::filesystem::path scratch(const std::string& name) {
  const char* root = std::getenv("CRTSIM_TEST_TMP");
  std::filesystem::path dir =
      (root ? std::filesystem::path(root) : std::filesystem::temp_directory_path() / "crtsim_tests") /
      name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

const crtsim::Census& default_census() {
  static const crtsim::Census census =
      crtsim::generate_synthetic_census(crtsim::default_profiles(), 42);
  return census;
}

crtsim::Census grid_census(int per_area) {
  std::vector<crtsim::Village> v;
  for (int a = 0; a < 12; ++a) {
    for (int k = 0; k < per_area; ++k) {
      crtsim::Village x;
      x.health_area = "A" + std::to_string(10 + a);
      x.village_id = x.health_area + "-" + std::to_string(k);
      x.population = 100 + 37 * ((a * 7 + k * 3) % 11);
      x.distance_km = 0.5 + 0.9 * ((a + 2 * k) % 7);
      x.n_children = 6 + (a + k) % 9;
      x.n_mcv1 = (x.n_children * (3 + (a * 5 + k) % 6)) / 9;
      v.push_back(x);
    }
  }
  return crtsim::Census(std::move(v));
}

Eigen::VectorXd brute_force_max(const std::function<double(const Eigen::VectorXd&)>& f,
                                Eigen::VectorXd x) {
  const Eigen::Index n = x.size();
  auto grad = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd g(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(p[i]));
      Eigen::VectorXd a = p, b = p;
      a[i] += h;
      b[i] -= h;
      g[i] = (f(a) - f(b)) / (2 * h);
    }
    return g;
  };
  for (int it = 0; it < 500; ++it) {
    const Eigen::VectorXd g = grad(x);
    Eigen::MatrixXd hess(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double h = 1e-4 * std::max(1.0, std::abs(x[j]));
      Eigen::VectorXd a = x, b = x;
      a[j] += h;
      b[j] -= h;
      hess.col(j) = (grad(a) - grad(b)) / (2 * h);
    }
    hess = 0.5 * (hess + hess.transpose()).eval();
    // Damp until -H + lambda I is positive definite (Levenberg-Marquardt).
    const double f0 = f(x);
    Eigen::VectorXd step;
    double t = 1.0;
    bool moved = false;
    for (double lambda = 0.0; lambda < 1e12; lambda = lambda == 0.0 ? 1e-6 : lambda * 10) {
      const Eigen::MatrixXd a = -hess + lambda * Eigen::MatrixXd::Identity(n, n);
      Eigen::LLT<Eigen::MatrixXd> llt(a);
      if (llt.info() != Eigen::Success) continue;
      step = llt.solve(g);
      t = 1.0;
      while (t > 1e-6 && !(f(x + t * step) >= f0)) t *= 0.5;
      if (f(x + t * step) >= f0) {
        moved = true;
        break;
      }
    }
    if (!moved) break;
    x += t * step;
    if ((t * step).cwiseAbs().maxCoeff() < 1e-11 * std::max(1.0, x.cwiseAbs().maxCoeff())) break;
  }
  return x;
}

double rel_diff(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

crtsim::AnalysisDataset random_dataset(std::mt19937_64& gen, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 0.6);
  std::vector<crtsim::AnalysisRow> rows;
  for (int j = 0; j < n; ++j) {
    crtsim::AnalysisRow r;
    r.treated = j % 2;
    r.m1 = 5 + static_cast<int>(u(gen) * 25);
    r.baseline_rate = 0.3 + 0.6 * u(gen);
    r.population = 50 + 900 * u(gen);
    r.distance_km = 0.2 + 10 * u(gen);
    const double eta = -0.5 + 0.6 * r.treated + 2.0 * r.baseline_rate + 0.0004 * r.population -
                       0.08 * r.distance_km + z(gen);
    std::binomial_distribution<int> b(r.m1, crtsim::expit(eta));
    r.y1 = b(gen);
    rows.push_back(r);
  }
  return crtsim::AnalysisDataset(std::move(rows));
}

Eigen::VectorXd column_rms(const Eigen::MatrixXd& x) {
  return (x.array().square().colwise().sum() / static_cast<double>(x.rows())).sqrt().transpose();
}

double binomial_loglik_reference(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                 const Eigen::VectorXd& m, const Eigen::VectorXd& b) {
  const Eigen::VectorXd eta = x * b;
  double ll = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double log1pexp = eta[i] > 0 ? eta[i] + std::log1p(std::exp(-eta[i])) : std::log1p(std::exp(eta[i]));
    ll += y[i] * eta[i] - m[i] * log1pexp;
  }
  return ll;
}

double beta_loglik_reference(const Eigen::MatrixXd& x, const Eigen::VectorXd& r,
                             const Eigen::VectorXd& theta) {
  const Eigen::Index p = x.cols();
  const double phi = std::exp(theta[p]);
  double ll = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double eta = 0;
    for (Eigen::Index k = 0; k < p; ++k) eta += x(i, k) * theta[k];
    const double mu = 1.0 / (1.0 + std::exp(-eta));
    const double a = mu * phi, b = (1 - mu) * phi;
    ll += std::lgamma(phi) - std::lgamma(a) - std::lgamma(b) + (a - 1) * std::log(r[i]) +
          (b - 1) * std::log1p(-r[i]);
  }
  return ll;
}

crtsim::ClusteredBinomial simulate_village_data(double tau2, std::uint64_t seed, double b0, double b1) {
  const crtsim::Census& c = testing::default_census();
  const auto z = crtsim::standardize_population(c);
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> alpha(0.0, std::sqrt(tau2));
  crtsim::ClusteredBinomial d;
  const auto n = static_cast<Eigen::Index>(c.size());
  d.x.resize(n, 2);
  d.successes.resize(n);
  d.trials.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const int m = c.villages()[static_cast<std::size_t>(j)].n_children;
    d.x(j, 0) = 1.0;
    d.x(j, 1) = z[static_cast<std::size_t>(j)];
    std::binomial_distribution<int> b(m, crtsim::expit(b0 + b1 * z[static_cast<std::size_t>(j)] + alpha(gen)));
    d.successes[j] = b(gen);
    d.trials[j] = m;
    d.cluster.push_back(static_cast<int>(j));
  }
  d.n_clusters = static_cast<int>(n);
  return d;
}

}  // namespace testing
