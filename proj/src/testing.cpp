#include "mote/testing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mote {

Eigen::MatrixXd contrast_matrix(int num_outcomes) {
  if (num_outcomes < 2) throw DataError("contrast_matrix: need at least 2 outcomes");
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(num_outcomes - 1, num_outcomes);
  for (int i = 0; i + 1 < num_outcomes; ++i) {
    c(i, i) = 1.0;
    c(i, i + 1) = -1.0;
  }
  return c;
}

TestResult homogeneity_test(const Eigen::VectorXd& psi_hat,
                            const mathkit::SymmetricMatrix& sigma_hat, std::int64_t n,
                            CovarianceSource source) {
  const int k = static_cast<int>(psi_hat.size());
  if (k < 2) throw DataError("homogeneity_test: need at least 2 outcomes");
  if (sigma_hat.dim() != k) throw DataError("homogeneity_test: covariance dimension mismatch");
  if (n < 1) throw DataError("homogeneity_test: need a positive sample size");

  const Eigen::MatrixXd c = contrast_matrix(k);
  const Eigen::VectorXd d = c * psi_hat;
  const Eigen::MatrixXd m = c * sigma_hat.dense() * c.transpose();
  const auto contrast_cov = mathkit::SymmetricMatrix::from_dense(m);

  TestResult result;
  result.covariance_source = source;

  Eigen::LLT<Eigen::MatrixXd> llt(contrast_cov.dense());
  if (llt.info() == Eigen::Success) {
    const Eigen::VectorXd solved = llt.solve(d);
    if (solved.allFinite()) {
      result.statistic = std::max(0.0, static_cast<double>(n) * d.dot(solved));
      result.df = k - 1;
      result.p_value = mathkit::chisq_upper_tail(result.statistic, result.df);
      return result;
    }
  }

  const auto pinv = mathkit::pseudo_inverse(contrast_cov);
  result.pseudo_inverse = true;
  result.df = pinv.rank;
  result.statistic = std::max(0.0, static_cast<double>(n) * d.dot(pinv.inverse * d));
  result.p_value =
      result.df >= 1 ? mathkit::chisq_upper_tail(result.statistic, result.df) : 1.0;
  return result;
}

std::vector<PairwiseResult> pairwise_tests(const Eigen::VectorXd& psi_hat,
                                           const mathkit::SymmetricMatrix& sigma_hat,
                                           std::int64_t n, Correction correction,
                                           double alpha) {
  const int k = static_cast<int>(psi_hat.size());
  if (k < 2) throw DataError("pairwise_tests: need at least 2 outcomes");
  if (sigma_hat.dim() != k) throw DataError("pairwise_tests: covariance dimension mismatch");
  if (!(alpha > 0.0 && alpha < 1.0)) throw DataError("alpha must lie in (0, 1)");

  std::vector<PairwiseResult> results;
  for (int j = 0; j < k; ++j) {
    for (int l = j + 1; l < k; ++l) {
      PairwiseResult r;
      r.first = j;
      r.second = l;
      const double diff = psi_hat[j] - psi_hat[l];
      const double variance = sigma_hat(j, j) + sigma_hat(l, l) - 2.0 * sigma_hat(j, l);
      if (variance <= 0.0) {
        if (diff != 0.0) {
          throw NumericError("pairwise_tests: zero contrast variance for pair (" +
                             std::to_string(j + 1) + ", " + std::to_string(l + 1) + ")");
        }
        r.statistic = 0.0;
      } else {
        r.statistic = static_cast<double>(n) * diff * diff / variance;
      }
      r.p_raw = mathkit::chisq_upper_tail(r.statistic, 1);
      results.push_back(r);
    }
  }

  std::vector<double> raw;
  raw.reserve(results.size());
  for (const auto& r : results) raw.push_back(r.p_raw);
  const auto adjusted = adjust_p_values(raw, correction);
  for (std::size_t i = 0; i < results.size(); ++i) {
    results[i].p_adjusted = adjusted[i];
    results[i].reject = adjusted[i] <= alpha;
  }
  return results;
}

std::vector<double> adjust_p_values(const std::vector<double>& p_raw, Correction correction) {
  const auto m = static_cast<double>(p_raw.size());
  std::vector<double> adjusted(p_raw.size());
  if (correction == Correction::bonferroni) {
    for (std::size_t i = 0; i < p_raw.size(); ++i) adjusted[i] = std::min(1.0, p_raw[i] * m);
    return adjusted;
  }
  // Benjamini-Hochberg step-up on the sorted raw p-values.
  std::vector<std::size_t> order(p_raw.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return p_raw[a] < p_raw[b]; });
  double running = 1.0;
  for (std::size_t rank = p_raw.size(); rank-- > 0;) {
    const std::size_t idx = order[rank];
    running = std::min(running, p_raw[idx] * m / static_cast<double>(rank + 1));
    adjusted[idx] = running;
  }
  return adjusted;
}

}  // namespace mote
