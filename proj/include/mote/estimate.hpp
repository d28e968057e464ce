#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mote/influence.hpp"
#include "mote/model.hpp"
#include "mote/nuisance.hpp"

namespace mote {

/// Plug-in moment estimates: sample averages of the influence-function
/// component columns.
MomentEstimates estimate_moments(const Dataset& data, const NuisanceFits& fits,
                                 Exec exec = Exec::parallel);
MomentEstimates estimate_moments(const IfComponents& components, Exec exec = Exec::parallel);

struct ScaledEffects {
  EffectTable table;
  InfluenceMatrix eif;
  MomentEstimates moments;
};

/// Scaled mean effects psi_k = (beta1 - beta0) / sd for every outcome, with
/// the EIF-based covariance, standard errors and Wald intervals.
ScaledEffects estimate_scaled_effects(const Dataset& data, const NuisanceFits& fits,
                                      double alpha = 0.05, Exec exec = Exec::parallel);

/// Marginal potential-outcome CDF estimate on the surface grid, monotonized
/// and clamped to [0, 1].
struct CdfEstimate {
  Eigen::VectorXd grid;
  Eigen::VectorXd values;
  int arm = 0;
  int outcome = 0;
};

CdfEstimate estimate_cdf(const Dataset& data, const NuisanceFits& fits, int outcome, int arm,
                         Exec exec = Exec::parallel);

/// Generalized inverse on the grid: smallest grid value with F(y) >= q.
double invert_cdf(const CdfEstimate& cdf, double q);

enum class QuantileCi { bootstrap, closed_form };

struct QuantileOptions {
  double alpha = 0.05;
  int bootstrap_reps = 1000;
  std::uint64_t seed = 0;
  int grid_size = 101;
  QuantileCi ci = QuantileCi::bootstrap;
  Exec exec = Exec::parallel;
};

struct QuantileEffect {
  double estimate = 0.0;
  double std_error = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  Eigen::Vector4d xi;  // (arm1 median, arm0 median, arm0 p75, arm0 p25)
  int excluded_replicates = 0;
  QuantileCi ci_method = QuantileCi::bootstrap;
};

/// Median difference over the control interquartile range. Surfaces come
/// from distribution regression on a grid of pooled empirical quantiles
/// (or from the oracle CDF when the setup carries one). Inference is a
/// pairs bootstrap by default; the closed-form EIF route with kernel
/// density estimates at the fitted quantiles is opt-in.
QuantileEffect estimate_quantile_effect(const Dataset& data, const NuisanceSetup& setup,
                                        int outcome, const QuantileOptions& options = {});

/// Stratum-conditional scaled effects gamma_k(v) for a discrete stratum
/// column, with per-stratum EIF inference.
struct EffectModification {
  std::vector<double> stratum_values;     // sorted distinct values of V
  Eigen::VectorXd stratum_share;          // empirical P(V = v)
  std::vector<EffectTable> per_stratum;   // one table per stratum
  std::vector<Eigen::MatrixXd> stratum_eif;  // per outcome: n x n_strata
  Eigen::MatrixXd gamma;                  // K x n_strata
  std::vector<int> stratum_of_unit;
  bool marginal_sd = false;
};

EffectModification estimate_effect_modification(const Dataset& data, const NuisanceFits& fits,
                                                const std::string& stratum_column,
                                                double alpha = 0.05, bool marginal_sd = false,
                                                Exec exec = Exec::parallel);

/// Regression-based effect modification for continuous or high-cardinality
/// V: the three influence components are regressed on V, the scaled-effect
/// surface formed from the fitted values, optionally projected onto a linear
/// model in V.
struct RegressionEffectMod {
  Eigen::MatrixXd gamma_hat;           // n x K fitted surface at each unit's V
  std::vector<FitResult> mean1_fits;   // per outcome
  std::vector<FitResult> mean0_fits;
  std::vector<FitResult> second_fits;
  std::vector<FitResult> projection;   // per outcome; empty when not requested
};

RegressionEffectMod estimate_effect_modification_regression(
    const Dataset& data, const NuisanceFits& fits, const std::vector<std::string>& v_columns,
    bool project_linear = false);

/// Nonnegative weights w_k(v) addressed by outcome index and stratum value;
/// absent pairs weigh zero.
class WeightFunction {
 public:
  void set(int outcome, double stratum_value, double weight);
  double operator()(int outcome, double stratum_value) const;
  const std::map<std::pair<int, double>, double>& entries() const { return table_; }

 private:
  std::map<std::pair<int, double>, double> table_;
};

struct WeightedSummary {
  double estimate = 0.0;
  double std_error = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  Eigen::VectorXd eif;
};

/// psi_star = sum_k sum_v P(V=v) w_k(v) gamma_k(v), with EIF-based Wald
/// inference.
WeightedSummary estimate_weighted_summary(const Dataset& data, const NuisanceFits& fits,
                                          const std::string& stratum_column,
                                          const WeightFunction& weights, double alpha = 0.05,
                                          Exec exec = Exec::parallel);

struct BootstrapEstimand {
  enum class Kind { scaled_mean, quantile } kind = Kind::scaled_mean;
  int outcome = 0;          // quantile only
  int grid_size = 101;      // quantile only
};

/// Pairs (row) bootstrap covariance of the selected estimand: nuisances are
/// refit on every resample and the covariance of the replicate estimates is
/// scaled by n. Resamples with an empty arm are redrawn (up to 10 times).
mathkit::SymmetricMatrix bootstrap_covariance(const Dataset& data, const NuisanceSetup& setup,
                                              const BootstrapEstimand& estimand, int replicates,
                                              std::uint64_t seed, Exec exec = Exec::parallel);

/// Row resample of a dataset (bootstrap helper).
Dataset resample_rows(const Dataset& data, const std::vector<std::int64_t>& rows);

}  // namespace mote
