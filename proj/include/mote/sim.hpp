#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mote/estimate.hpp"
#include "mote/mathkit.hpp"
#include "mote/model.hpp"
#include "mote/nuisance.hpp"

namespace mote::sim {

enum class Correct { both, trt, out, none };

Correct correct_from_string(const std::string& label);
std::string to_string(Correct c);

/// One Monte-Carlo study cell: sample size, replicate count, effect
/// parameter lambda (2 = main setting, 0 = homogeneous null) and which
/// nuisance models are fed the true covariates.
struct SimScenario {
  std::int64_t n = 1000;
  int n_sim = 1000;
  double lambda = 2.0;
  Correct correct = Correct::both;
  std::uint64_t master_seed = 0;
  double alpha = 0.05;
  double clip = 0.01;
};

/// Four-outcome Gaussian design: X ~ N(0, I4), expit-linear treatment,
/// Y_k | X, A ~ N(mu_k(x, a), k^2) with mu_k = k * s_k(x) + 2 (k - lambda) a
/// and the alternating sign pattern s_k.
Dataset generate_dataset(std::int64_t n, double lambda, mathkit::Rng& rng);

/// The scaled effect implied by the design: psi_k = 1 - lambda / k.
Eigen::VectorXd true_scaled_effects(double lambda);

/// Kang-Schafer style distortions of the four covariates, used to induce
/// controlled nuisance misspecification.
Eigen::MatrixXd misspecify_covariates(const Eigen::MatrixXd& x);

/// Analysis features per nuisance block: the propensity and outcome-mean
/// blocks see the true or transformed covariates depending on the scenario;
/// the second-moment block adds squares and pairwise products of the
/// outcome-mean features.
struct FeatureSet {
  Eigen::MatrixXd propensity;     // n x 4
  Eigen::MatrixXd outcome_mean;   // n x 4
  Eigen::MatrixXd quadratic;      // n x 10, squares then pairwise products
};

FeatureSet build_features(const Eigen::MatrixXd& x_true, const Eigen::MatrixXd& x_miss,
                          Correct correct);

/// Feature-augmented dataset plus the matching nuisance specs, ready for
/// fit_nuisances.
struct AnalysisProblem {
  Dataset data;
  std::vector<ModelSpec> specs;
};

AnalysisProblem assemble_analysis(const Dataset& raw, const FeatureSet& features);

struct SimSummary {
  SimScenario scenario;
  Eigen::VectorXd true_psi;
  Eigen::VectorXd bias;
  Eigen::VectorXd empirical_sd;
  Eigen::VectorXd median_se;
  Eigen::VectorXd rmse_sqrt_n;   // sqrt(n * mean squared error)
  Eigen::VectorXd coverage;      // 95% interval coverage, +-1.96 SE
  double rejection_rate = 0.0;   // homogeneity test at scenario alpha
  int excluded = 0;              // replicates dropped for numerical failure
  int completed = 0;
};

/// Runs the full replicate loop on deterministic per-replicate streams and
/// aggregates with the reference definitions (bias, sd, median SE,
/// sqrt(n)-scaled RMSE, coverage, rejection rate). Results are bit-identical
/// for a given scenario regardless of the execution policy.
SimSummary run_replications(const SimScenario& scenario, Exec exec = Exec::parallel);

/// Fully discrete design (binary covariate, three-point outcomes) whose
/// estimands can be enumerated exactly; used to validate the estimators
/// against closed-form truths.
struct DiscreteDgp {
  static constexpr int kOutcomes = 2;
  double p_x = 0.4;                                  // P(X = 1)
  std::array<double, 2> propensity_by_x = {0.3, 0.7};
  std::array<double, 3> base_weights = {0.5, 0.3, 0.2};

  double tilt(int outcome, int x, int arm) const;
  std::array<double, 3> pmf(int outcome, int x, int arm) const;  // over y = 0, 1, 2
  double mean(int outcome, int x, int arm) const;
  double second_moment(int outcome, int x, int arm) const;

  Dataset sample(std::int64_t n, mathkit::Rng& rng) const;
  OracleNuisances oracle() const;
};

}  // namespace mote::sim
