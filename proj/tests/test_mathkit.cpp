#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mote/mathkit.hpp"
#include "support/oracles.hpp"

using namespace mote;
using mathkit::chisq_upper_tail;
using mathkit::normal_cdf;
using mathkit::normal_quantile;

TEST_CASE("normal cdf and quantile") {
  CHECK(normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(std::fabs(normal_quantile(0.975) - 1.959964) < 1e-5);
  CHECK(std::fabs(normal_quantile(0.975) - oracles::normal_quantile(0.975)) < 1e-9);

  for (double x = -8.0; x <= 8.0; x += 0.5) {
    CHECK(std::fabs(normal_cdf(x) - oracles::normal_cdf(x)) < 1e-10);
  }
  // quantile(cdf(x)) = x on the bulk of the domain
  for (double x = -6.0; x <= 6.0; x += 0.25) {
    CHECK(std::fabs(normal_quantile(normal_cdf(x)) - x) < 1e-8);
  }
  // monotone on a grid
  double prev = -1.0;
  for (double x = -8.0; x <= 8.0; x += 0.1) {
    const double c = normal_cdf(x);
    CHECK(c >= prev);
    prev = c;
  }
  CHECK_THROWS_AS(normal_quantile(0.0), std::invalid_argument);
  CHECK_THROWS_AS(normal_quantile(1.0), std::invalid_argument);
}

TEST_CASE("chi-squared upper tail") {
  CHECK(chisq_upper_tail(0.0, 3) == doctest::Approx(1.0));
  CHECK(std::fabs(chisq_upper_tail(7.815, 3) - 0.05) < 5e-4);
  CHECK(std::fabs(chisq_upper_tail(3.841, 1) - 0.05) < 5e-4);

  // quadrature oracle across a grid of (x, df)
  for (int df : {1, 2, 3, 4, 6, 8, 12}) {
    for (double x : {0.1, 0.5, 1.0, 2.5, 5.0, 7.815, 12.0, 20.0, 40.0}) {
      const double mine = chisq_upper_tail(x, df);
      const double ref = oracles::chisq_upper(x, df);
      CHECK(std::fabs(mine - ref) <= 1e-10 * std::max(ref, 1e-300));
    }
  }
  // df = 1 reduces to the normal tail: Q(x, 1) = 2 {1 - Phi(sqrt(x))}, which
  // is erfc(sqrt(x / 2)) in cancellation-free form
  for (double x = 0.5; x <= 40.0; x += 0.5) {
    const double identity = std::erfc(std::sqrt(0.5 * x));
    CHECK(std::fabs(chisq_upper_tail(x, 1) - identity) < 1e-9 * identity);
  }
  // monotone decreasing in x
  double prev = 2.0;
  for (double x = 0.0; x <= 30.0; x += 0.25) {
    const double q = chisq_upper_tail(x, 4);
    CHECK(q <= prev);
    prev = q;
  }
  CHECK_THROWS_AS(chisq_upper_tail(-1.0, 3), std::invalid_argument);
  CHECK_THROWS_AS(chisq_upper_tail(1.0, 0), std::invalid_argument);
}

TEST_CASE("symmetric matrix construction") {
  Eigen::MatrixXd m(2, 2);
  m << 1.0, 0.5, 0.5 + 1e-14, 2.0;
  const auto s = mathkit::SymmetricMatrix::from_dense(m);
  CHECK(s(0, 1) == s(1, 0));
  m(1, 0) = 0.7;
  CHECK_THROWS_AS(mathkit::SymmetricMatrix::from_dense(m), NumericError);
}

TEST_CASE("spd solve and pseudo-inverse") {
  const auto eye = mathkit::SymmetricMatrix::from_dense(Eigen::MatrixXd::Identity(3, 3));
  Eigen::VectorXd b(3);
  b << 1.0, -2.0, 3.0;
  CHECK((mathkit::solve_spd(eye, b) - b).cwiseAbs().maxCoeff() < 1e-14);

  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(2, 2);
  d(0, 0) = 2.0;
  d(1, 1) = 8.0;
  Eigen::VectorXd rhs(2);
  rhs << 2.0, 8.0;
  const auto x = mathkit::solve_spd(mathkit::SymmetricMatrix::from_dense(d), rhs);
  CHECK(x[0] == doctest::Approx(1.0));
  CHECK(x[1] == doctest::Approx(1.0));

  // random SPD system: residual check
  mathkit::Rng rng(11, 0);
  Eigen::MatrixXd a(5, 5);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) a(i, j) = rng.normal();
  }
  Eigen::MatrixXd spd = a * a.transpose() + Eigen::MatrixXd::Identity(5, 5);
  Eigen::VectorXd rhs5(5);
  for (int i = 0; i < 5; ++i) rhs5[i] = rng.normal();
  const auto sym = mathkit::SymmetricMatrix::from_dense(spd);
  const auto sol = mathkit::solve_spd(sym, rhs5);
  CHECK((spd * sol - rhs5).cwiseAbs().maxCoeff() < 1e-9);

  // rank-deficient PSD: pseudo-inverse drops the null direction
  Eigen::MatrixXd low = Eigen::MatrixXd::Zero(2, 2);
  low << 1.0, 1.0, 1.0, 1.0;
  const auto pinv = mathkit::pseudo_inverse(mathkit::SymmetricMatrix::from_dense(low));
  CHECK(pinv.rank == 1);
  CHECK(pinv.truncated);
  CHECK((pinv.inverse - 0.25 * low).cwiseAbs().maxCoeff() < 1e-12);

  Eigen::MatrixXd indef = Eigen::MatrixXd::Zero(2, 2);
  indef(0, 0) = 1.0;
  indef(1, 1) = -1.0;
  CHECK_THROWS_AS(mathkit::pseudo_inverse(mathkit::SymmetricMatrix::from_dense(indef)),
                  NumericError);
}

TEST_CASE("empirical covariance") {
  Eigen::MatrixXd constant = Eigen::MatrixXd::Constant(50, 2, 3.0);
  const auto zero = mathkit::empirical_covariance(constant);
  CHECK(zero(0, 0) == 0.0);
  CHECK(zero(0, 1) == 0.0);

  mathkit::Rng rng(5, 1);
  Eigen::MatrixXd m(400, 2);
  for (int i = 0; i < 400; ++i) {
    m(i, 0) = rng.normal();
    m(i, 1) = m(i, 0);  // duplicated column: perfect correlation
  }
  const auto dup = mathkit::empirical_covariance(m);
  CHECK(dup(0, 0) == doctest::Approx(dup(0, 1)));
  CHECK(dup(0, 0) == doctest::Approx(dup(1, 1)));

  // Monte-Carlo against a known covariance
  Eigen::MatrixXd chol(3, 3);
  chol << 1.0, 0.0, 0.0, 0.5, 1.0, 0.0, -0.3, 0.2, 0.8;
  const Eigen::MatrixXd target = chol * chol.transpose();
  const int n = 200000;
  Eigen::MatrixXd draws(n, 3);
  mathkit::Rng rng2(7, 2);
  for (int i = 0; i < n; ++i) {
    Eigen::Vector3d z(rng2.normal(), rng2.normal(), rng2.normal());
    draws.row(i) = (chol * z).transpose();
  }
  const auto cov = mathkit::empirical_covariance(draws);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      CHECK(std::fabs(cov(i, j) - target(i, j)) < 0.05 * std::max(1.0, target(i, j)));
    }
  }
  CHECK_THROWS_AS(mathkit::empirical_covariance(Eigen::MatrixXd::Zero(1, 2)),
                  std::invalid_argument);
}

TEST_CASE("rng determinism and moments") {
  mathkit::Rng a(123, 4);
  mathkit::Rng b(123, 4);
  for (int i = 0; i < 1000; ++i) CHECK(a.uniform() == b.uniform());

  mathkit::Rng c(123, 5);
  bool differs = false;
  mathkit::Rng a2(123, 4);
  for (int i = 0; i < 64 && !differs; ++i) differs = a2.next() != c.next();
  CHECK(differs);

  mathkit::Rng u(99, 0);
  double mean = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) mean += u.uniform();
  mean /= n;
  CHECK(std::fabs(mean - 0.5) < 0.002);

  mathkit::Rng g(99, 1);
  double sum = 0.0, ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = g.normal();
    sum += z;
    ss += z * z;
  }
  const double var = ss / n - (sum / n) * (sum / n);
  CHECK(std::fabs(var - 1.0) < 0.01);

  mathkit::Rng idx(3, 3);
  for (int i = 0; i < 1000; ++i) {
    const auto v = idx.below(17);
    CHECK(v >= 0);
    CHECK(v < 17);
  }
}
