#pragma once

#include <Eigen/Dense>

#include "mote/model.hpp"
#include "mote/parallel.hpp"

namespace mote {

/// Per-unit values of the three influence-function components, one column
/// per outcome: phi0 and phi1 are the arm-specific mean components, phi2 the
/// control-arm second-moment component.
struct IfComponents {
  Eigen::MatrixXd phi0;
  Eigen::MatrixXd phi1;
  Eigen::MatrixXd phi2;
};

/// Arm-a mean component for outcome k:
///   1(A=a)/pi(a|X) * {Y_k - mu_k(X,a)} + mu_k(X,a).
Eigen::VectorXd phi_a(const Dataset& data, const NuisanceFits& fits, int outcome, int arm,
                      Exec exec = Exec::parallel);

/// Control-arm second-moment component for outcome k:
///   1(A=0)/pi(0|X) * {Y_k^2 - eta_k(X,0)} + eta_k(X,0).
Eigen::VectorXd phi_2(const Dataset& data, const NuisanceFits& fits, int outcome,
                      Exec exec = Exec::parallel);

/// CDF component at threshold y (y must be a grid point of the fitted
/// surface):
///   1(A=a)/pi(a|X) * {1(Y_k <= y) - nu_k(y|X,a)} + nu_k(y|X,a).
Eigen::VectorXd phi_cdf(const Dataset& data, const NuisanceFits& fits, int outcome, int arm,
                        double threshold, Exec exec = Exec::parallel);

/// Same, with the nu column supplied directly.
Eigen::VectorXd phi_cdf_at(const Dataset& data, const NuisanceFits& fits, int outcome,
                           int arm, double threshold, const Eigen::VectorXd& nu_at_y,
                           Exec exec = Exec::parallel);

IfComponents compute_components(const Dataset& data, const NuisanceFits& fits,
                                Exec exec = Exec::parallel);

/// Gradient of g(b0, b1, b2) = (b1 - b0) / sqrt(b2 - b0^2), the delta-method
/// map from moments to the scaled effect.
Eigen::Vector3d grad_g(const Eigen::Vector3d& beta);

/// Efficient influence function of the scaled mean effect, assembled from
/// components and self-consistent (beta, psi):
///   (phi1 - phi0)/sd - psi * {phi2 + b2 - 2 b0 phi0} / (2 sd^2).
/// Column means are exactly zero (to rounding) when beta and psi come from
/// the same sample averages.
InfluenceMatrix eif_scaled(const IfComponents& components, const MomentEstimates& beta,
                           const Eigen::VectorXd& psi, Exec exec = Exec::parallel);

/// Efficient influence function of the quantile effect. phi_grid holds the
/// raw CDF components at the four fitted quantiles in the order
/// (arm1, q=.50), (arm0, .50), (arm0, .75), (arm0, .25); xi the quantiles
/// themselves; density_at_xi the outcome density estimates there.
Eigen::VectorXd eif_quantile(const std::array<Eigen::VectorXd, 4>& phi_grid,
                             const Eigen::Vector4d& xi, const Eigen::Vector4d& density_at_xi,
                             double psi_q);

/// Efficient influence function of the weighted summary: per unit,
///   sum_k w_k(V_i) * {P(V_i) * stratum EIF_k(V_i) + gamma_k(V_i)} - psi_star,
/// the delta-method gradient over the stratum shares and stratum effects.
/// stratum_eif[k] holds the per-stratum effect EIF columns (zero off
/// stratum); gamma(k, v) and weights(k, v) are K x n_strata tables;
/// stratum_share holds the empirical P(V = v). Units in strata with zero
/// weight contribute only through other outcomes.
Eigen::VectorXd eif_weighted(const std::vector<Eigen::MatrixXd>& stratum_eif,
                             const Eigen::MatrixXd& gamma,
                             const std::vector<int>& stratum_of_unit,
                             const Eigen::MatrixXd& weights,
                             const Eigen::VectorXd& stratum_share, double psi_star,
                             Exec exec = Exec::parallel);

}  // namespace mote
