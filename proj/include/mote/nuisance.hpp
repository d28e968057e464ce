#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mote/model.hpp"
#include "mote/parallel.hpp"

namespace mote {

enum class Family { linear, logistic };

enum class Target { propensity, outcome_mean, second_moment, cdf };

/// Which nuisance to fit, on which named covariate columns. The family
/// defaults by target (logistic for propensity/cdf, linear otherwise) but
/// can be overridden.
struct ModelSpec {
  Target target = Target::propensity;
  int outcome = -1;  // 0-based outcome index; ignored for propensity
  std::vector<std::string> feature_columns;
  std::optional<Family> family;

  Family effective_family() const {
    if (family) return *family;
    return (target == Target::propensity || target == Target::cdf) ? Family::logistic
                                                                   : Family::linear;
  }
};

struct FitResult {
  Eigen::VectorXd coefficients;  // intercept first
  bool converged = true;
  int iterations = 0;
  double objective = 0.0;  // RSS for linear fits, deviance for logistic
};

/// Weighted least squares of response on [1, design] via column-pivoted QR,
/// with a small ridge fallback on rank-deficient designs.
FitResult fit_linear(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                     const Eigen::VectorXd* weights = nullptr,
                     const std::vector<std::string>* column_names = nullptr);

/// Logistic regression by IRLS; stops when max |score| < 1e-8 or after 100
/// iterations (the latter sets converged = false, the separation flag).
FitResult fit_logistic(const Eigen::MatrixXd& design, const Eigen::VectorXd& response01);

Eigen::VectorXd predict_linear(const FitResult& fit, const Eigen::MatrixXd& design);
Eigen::VectorXd predict_logistic(const FitResult& fit, const Eigen::MatrixXd& design);

/// True-function plug-ins that bypass fitting entirely. Row arguments are
/// views of one covariate row.
struct OracleNuisances {
  using Row = Eigen::Ref<const Eigen::VectorXd>;
  std::function<double(const Row&)> propensity;                    // pi(1 | x)
  std::function<double(const Row&, int k, int arm)> outcome_mean;  // mu_k(x, a)
  std::function<double(const Row&, int k)> second_moment;          // eta_k(x, 0)
  std::function<double(const Row&, int k, int arm, double y)> cdf; // nu_k(y | x, a)
};

/// Everything needed to (re)fit nuisances on a dataset or a bootstrap
/// resample of it.
struct NuisanceSetup {
  std::vector<ModelSpec> specs;
  double clip = 0.01;
  std::optional<int> cross_fit_folds;
  const OracleNuisances* oracle = nullptr;
};

/// Fits propensity, per-arm outcome means and control-arm second moments,
/// evaluating every surface at every unit. Outcome models are fit within
/// each arm on that arm's units. With cross-fitting, each unit's predictions
/// come from models trained on the other folds (fold of unit i = i mod
/// folds). Oracle functions, when supplied, bypass fitting.
NuisanceFits fit_nuisances(const Dataset& data, const NuisanceSetup& setup);

/// Distribution regression for one (outcome, arm): per grid point, logistic
/// regression of 1(Y_k <= y) on the spec's features within the arm,
/// predicted for all units. Per-unit curves are monotonized by running
/// maximum; grid points whose indicator is constant in the arm short-circuit
/// to 0 or 1.
CdfSurface fit_cdf_surface(const Dataset& data, int outcome, const Eigen::VectorXd& grid,
                           int arm, const ModelSpec& spec, Exec exec = Exec::parallel);

/// Oracle counterpart of fit_cdf_surface, evaluating a known conditional CDF
/// on the grid.
CdfSurface oracle_cdf_surface(const Dataset& data, int outcome, const Eigen::VectorXd& grid,
                              int arm, const OracleNuisances& oracle,
                              Exec exec = Exec::parallel);

}  // namespace mote
