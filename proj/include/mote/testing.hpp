#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mote/mathkit.hpp"
#include "mote/model.hpp"

namespace mote {

/// (K-1) x K banded contrast with C(i, i) = 1 and C(i, i+1) = -1; its rows
/// span the differences, so C annihilates constant vectors.
Eigen::MatrixXd contrast_matrix(int num_outcomes);

enum class CovarianceSource { closed_form, bootstrap };

struct TestResult {
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
  CovarianceSource covariance_source = CovarianceSource::closed_form;
  bool pseudo_inverse = false;  // set when C Sigma C^T was rank deficient
};

/// Wald test of equal scaled effects across outcomes:
///   T_n = n (C psi)^T (C Sigma C^T)^{-1} (C psi),  T_n ~ chi^2_{K-1} under
/// the null. A singular contrast covariance falls back to a thresholded
/// pseudo-inverse with df reduced to the numerical rank.
TestResult homogeneity_test(const Eigen::VectorXd& psi_hat,
                            const mathkit::SymmetricMatrix& sigma_hat, std::int64_t n,
                            CovarianceSource source = CovarianceSource::closed_form);

enum class Correction { bonferroni, benjamini_hochberg };

struct PairwiseResult {
  int first = 0;   // outcome indices, 0-based
  int second = 0;
  double statistic = 0.0;
  double p_raw = 1.0;
  double p_adjusted = 1.0;
  bool reject = false;
};

/// Multiplicity adjustment of raw p-values: Bonferroni multiplies by the
/// count (capped at 1); Benjamini-Hochberg applies the step-up rule, so
/// rejecting adjusted values at alpha reproduces the FDR procedure.
std::vector<double> adjust_p_values(const std::vector<double>& p_raw, Correction correction);

/// All pairwise Wald tests of psi_j = psi_k with family-wise (Bonferroni) or
/// FDR (Benjamini-Hochberg step-up) adjustment.
std::vector<PairwiseResult> pairwise_tests(const Eigen::VectorXd& psi_hat,
                                           const mathkit::SymmetricMatrix& sigma_hat,
                                           std::int64_t n, Correction correction,
                                           double alpha);

}  // namespace mote
