#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crtsim/census.hpp"
#include "crtsim/estimators.hpp"
#include "crtsim/glmm.hpp"
#include "crtsim/rng.hpp"

namespace testing {

/// Scratch directory for a test, emptied on creation.
std::filesystem::path scratch(const std::string& name);

/// The default synthetic census used throughout the suite.
const crtsim::Census& default_census();

/// Twelve areas of `per_area` villages with deterministic covariates.
crtsim::Census grid_census(int per_area);

/// Maximizes f from x0 by Newton's method on central-difference
/// derivatives with backtracking. Independent of the production fitters.
Eigen::VectorXd brute_force_max(const std::function<double(const Eigen::VectorXd&)>& f,
                                Eigen::VectorXd x0);

double rel_diff(double a, double b);

/// Random village data from a logistic model with extra-binomial noise.
crtsim::AnalysisDataset random_dataset(std::mt19937_64& gen, int n);

/// Root mean square of each column.
Eigen::VectorXd column_rms(const Eigen::MatrixXd& x);

/// Binomial kernel log-likelihood, written out directly.
double binomial_loglik_reference(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                 const Eigen::VectorXd& m, const Eigen::VectorXd& b);

/// Beta log-likelihood at theta = (coefficients, log precision).
double beta_loglik_reference(const Eigen::MatrixXd& x, const Eigen::VectorXd& r,
                             const Eigen::VectorXd& theta);

/// Village-level binomial data on the default census: intercept plus
/// standardized population, Gaussian village intercepts of variance tau2.
crtsim::ClusteredBinomial simulate_village_data(double tau2, std::uint64_t seed, double b0 = 1.0,
                                                double b1 = 0.3);

}  // namespace testing
