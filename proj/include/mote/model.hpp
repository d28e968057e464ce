#pragma once

#include <Eigen/Dense>
#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mote/errors.hpp"
#include "mote/mathkit.hpp"

namespace mote {

/// Column-labelled study data: covariates X (n x p), binary treatment A,
/// outcomes Y (n x K). Immutable by convention after validation.
struct Dataset {
  Eigen::MatrixXd covariates;
  Eigen::VectorXd treatment;
  Eigen::MatrixXd outcomes;
  std::vector<std::string> covariate_names;
  std::vector<std::string> outcome_names;

  std::int64_t n() const { return covariates.rows(); }
  int num_covariates() const { return static_cast<int>(covariates.cols()); }
  int num_outcomes() const { return static_cast<int>(outcomes.cols()); }

  int arm(std::int64_t i) const { return treatment[i] != 0.0 ? 1 : 0; }

  /// Index of a named covariate column; throws DataError when absent.
  int covariate_index(const std::string& name) const;
  int outcome_index(const std::string& name) const;

  /// Column-bound view of the named covariates, in the given order.
  Eigen::MatrixXd covariate_block(const std::vector<std::string>& names) const;
};

struct ValidationIssue {
  std::string invariant;   // which contract failed
  std::string detail;      // human-readable location, 1-based rows
};

/// All invariant violations in the dataset; empty means valid.
std::vector<ValidationIssue> check_dataset(const Dataset& data);

class ValidationError : public DataError {
 public:
  ValidationError(std::string what, std::vector<ValidationIssue> issues)
      : DataError(std::move(what)), issues_(std::move(issues)) {}
  const std::vector<ValidationIssue>& issues() const { return issues_; }

 private:
  std::vector<ValidationIssue> issues_;
};

/// Returns the dataset unchanged iff every invariant holds; otherwise throws
/// ValidationError carrying one issue per violation.
const Dataset& validate(const Dataset& data);

/// Per-unit monotone CDF surface for one (outcome, arm): values(i, g) is
/// the fitted P(Y <= grid[g] | X_i, arm), nondecreasing along the grid.
struct CdfSurface {
  Eigen::VectorXd grid;
  Eigen::MatrixXd values;
};

/// Evaluated nuisance surfaces. propensity holds pi(1 | X_i) clipped to
/// [delta, 1 - delta]; outcome means and control-arm second moments are
/// predictions for every unit regardless of its arm.
struct NuisanceFits {
  Eigen::VectorXd propensity;
  std::array<Eigen::MatrixXd, 2> outcome_mean;  // [arm](n, K)
  Eigen::MatrixXd second_moment;                // (n, K), arm 0
  double clip_bound = 0.01;
  std::vector<std::string> warnings;  // non-fatal fit diagnostics
  std::map<std::pair<int, int>, CdfSurface> cdf_surfaces;  // (outcome, arm)

  double prop(std::int64_t i, int arm) const {
    return arm == 1 ? propensity[i] : 1.0 - propensity[i];
  }
  const CdfSurface& cdf_surface(int outcome, int arm) const;
  bool has_cdf_surface(int outcome, int arm) const;
};

/// Plug-in moment estimates beta_0k = E(Y_k^0), beta_1k = E(Y_k^1),
/// beta_2k = E{(Y_k^0)^2}.
struct MomentEstimates {
  Eigen::VectorXd beta0;
  Eigen::VectorXd beta1;
  Eigen::VectorXd beta2;

  int num_outcomes() const { return static_cast<int>(beta0.size()); }
  double control_variance(int k) const { return beta2[k] - beta0[k] * beta0[k]; }
  /// Throws NumericError naming the outcome when the control variance is
  /// numerically degenerate (below 1e-12).
  void require_nondegenerate(const std::vector<std::string>& outcome_names) const;
};

enum class IfKind { scaled_mean, quantile, stratum, weighted_summary };

/// Per-unit evaluations of the estimated efficient influence functions,
/// one column per outcome.
struct InfluenceMatrix {
  Eigen::MatrixXd values;
  IfKind kind = IfKind::scaled_mean;
};

/// Point estimates with influence-function-based Wald inference.
struct EffectTable {
  Eigen::VectorXd estimates;
  Eigen::VectorXd std_errors;
  Eigen::VectorXd ci_lower;
  Eigen::VectorXd ci_upper;
  mathkit::SymmetricMatrix covariance;
  double alpha = 0.05;
  std::vector<std::string> labels;
};

}  // namespace mote
