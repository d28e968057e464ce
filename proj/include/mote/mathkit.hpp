#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mote/parallel.hpp"

namespace mote::mathkit {

// ---------------------------------------------------------------------------
// Distribution kernels
// ---------------------------------------------------------------------------

/// Standard normal CDF, absolute error below 1e-14 on [-8, 8].
double normal_cdf(double x);

/// Standard normal quantile for p in (0, 1); rational approximation with one
/// Halley refinement against normal_cdf.
double normal_quantile(double p);

/// Upper-tail chi-squared probability P(X >= x) for df >= 1 degrees of
/// freedom, via the regularized incomplete gamma function (series below
/// a + 1, continued fraction above).
double chisq_upper_tail(double x, int df);

// ---------------------------------------------------------------------------
// Dense symmetric linear algebra
// ---------------------------------------------------------------------------

/// Symmetric matrix stored as a packed lower triangle. Construction
/// symmetrizes inputs whose asymmetry is within tolerance and rejects
/// anything worse.
class SymmetricMatrix {
 public:
  SymmetricMatrix() = default;
  explicit SymmetricMatrix(int dim);

  static SymmetricMatrix from_dense(const Eigen::MatrixXd& m);

  int dim() const { return dim_; }
  double operator()(int i, int j) const { return packed_[pack_index(i, j)]; }
  void set(int i, int j, double v) { packed_[pack_index(i, j)] = v; }
  Eigen::MatrixXd dense() const;

 private:
  std::size_t pack_index(int i, int j) const;
  int dim_ = 0;
  std::vector<double> packed_;
};

/// Solves A x = b: Cholesky when positive definite, eigenvalue-thresholded
/// pseudo-inverse otherwise. Indefinite inputs raise NumericError.
Eigen::VectorXd solve_spd(const SymmetricMatrix& a, const Eigen::VectorXd& b);

struct PseudoInverse {
  Eigen::MatrixXd inverse;
  int rank = 0;
  bool truncated = false;  // true when eigenvalues were thresholded away
};

/// Moore-Penrose inverse of a PSD matrix; eigenvalues below
/// 1e-10 * max eigenvalue are treated as zero.
PseudoInverse pseudo_inverse(const SymmetricMatrix& a);

/// K x K covariance of the columns of an n x K matrix, mean-centered with
/// divisor n.
SymmetricMatrix empirical_covariance(const Eigen::MatrixXd& m,
                                     Exec exec = Exec::parallel);

// ---------------------------------------------------------------------------
// Reproducible random streams
// ---------------------------------------------------------------------------

/// Deterministic value-typed generator (xoshiro256++). Distinct stream
/// indices under the same master seed give statistically independent
/// sequences; identical (seed, stream) pairs give identical draws.
class Rng {
 public:
  Rng(std::uint64_t master_seed, std::uint64_t stream);

  std::uint64_t next();
  double uniform();  // [0, 1)
  double normal();   // standard normal, polar method
  bool bernoulli(double p);
  std::int64_t below(std::int64_t n);  // uniform integer in [0, n)

 private:
  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mote::mathkit
