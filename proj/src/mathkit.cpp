#include "mote/mathkit.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "mote/errors.hpp"

namespace mote::mathkit {

double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

namespace {

// Acklam's rational approximation, good to ~1e-9 before refinement.
double normal_quantile_approx(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  if (p < plow) {
    double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - plow) {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  double q = p - 0.5;
  double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::invalid_argument("normal_quantile: p must lie in (0, 1)");
  }
  double x = normal_quantile_approx(p);
  // One Halley step pushes the error to machine precision.
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

namespace {

// Regularized lower incomplete gamma P(a, x) by series expansion; valid for
// x < a + 1.
double gamma_p_series(double a, double x) {
  if (x <= 0.0) return 0.0;
  double ap = a;
  double term = 1.0 / a;
  double sum = term;
  for (int i = 0; i < 1000; ++i) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::fabs(term) < std::fabs(sum) * std::numeric_limits<double>::epsilon()) {
      break;
    }
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma Q(a, x) by modified Lentz continued
// fraction; valid for x >= a + 1.
double gamma_q_cf(double a, double x) {
  const double eps = std::numeric_limits<double>::epsilon();
  const double fpmin = std::numeric_limits<double>::min() / eps;
  double b = x + 1.0 - a;
  double c = 1.0 / fpmin;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 1000; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = b + an / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) <= eps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double chisq_upper_tail(double x, int df) {
  if (df < 1) throw std::invalid_argument("chisq_upper_tail: df must be >= 1");
  if (!(x >= 0.0) || !std::isfinite(x)) {
    throw std::invalid_argument("chisq_upper_tail: x must be finite and >= 0");
  }
  const double a = 0.5 * static_cast<double>(df);
  const double t = 0.5 * x;
  if (t == 0.0) return 1.0;
  if (t < a + 1.0) return 1.0 - gamma_p_series(a, t);
  return gamma_q_cf(a, t);
}

// ---------------------------------------------------------------------------

SymmetricMatrix::SymmetricMatrix(int dim)
    : dim_(dim), packed_(static_cast<std::size_t>(dim) * (dim + 1) / 2, 0.0) {
  if (dim < 1) throw std::invalid_argument("SymmetricMatrix: dim must be >= 1");
}

std::size_t SymmetricMatrix::pack_index(int i, int j) const {
  if (j > i) std::swap(i, j);
  return static_cast<std::size_t>(i) * (i + 1) / 2 + static_cast<std::size_t>(j);
}

SymmetricMatrix SymmetricMatrix::from_dense(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument("SymmetricMatrix: input must be square");
  }
  const int k = static_cast<int>(m.rows());
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym >= 1e-12 * scale) {
    throw NumericError("SymmetricMatrix: asymmetry " + std::to_string(asym) +
                       " exceeds tolerance");
  }
  SymmetricMatrix out(k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j <= i; ++j) out.set(i, j, 0.5 * (m(i, j) + m(j, i)));
  }
  return out;
}

Eigen::MatrixXd SymmetricMatrix::dense() const {
  Eigen::MatrixXd m(dim_, dim_);
  for (int i = 0; i < dim_; ++i) {
    for (int j = 0; j < dim_; ++j) m(i, j) = (*this)(i, j);
  }
  return m;
}

Eigen::VectorXd solve_spd(const SymmetricMatrix& a, const Eigen::VectorXd& b) {
  if (b.size() != a.dim()) {
    throw std::invalid_argument("solve_spd: dimension mismatch");
  }
  const Eigen::MatrixXd m = a.dense();
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) {
    Eigen::VectorXd x = llt.solve(b);
    if (x.allFinite()) return x;
  }
  return pseudo_inverse(a).inverse * b;
}

PseudoInverse pseudo_inverse(const SymmetricMatrix& a) {
  const Eigen::MatrixXd m = a.dense();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) {
    throw NumericError("pseudo_inverse: eigendecomposition failed");
  }
  const Eigen::VectorXd ev = es.eigenvalues();
  const double lmax = ev.cwiseAbs().maxCoeff();
  const double thresh = 1e-10 * lmax;
  if (ev.minCoeff() < -std::max(thresh, 1e-300)) {
    throw NumericError("pseudo_inverse: matrix is indefinite");
  }
  PseudoInverse out;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
  for (int i = 0; i < ev.size(); ++i) {
    if (ev[i] > thresh) {
      inv[i] = 1.0 / ev[i];
      ++out.rank;
    } else {
      out.truncated = true;
    }
  }
  out.inverse =
      es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  return out;
}

SymmetricMatrix empirical_covariance(const Eigen::MatrixXd& m, Exec exec) {
  const std::int64_t n = m.rows();
  const int k = static_cast<int>(m.cols());
  if (n < 2) throw std::invalid_argument("empirical_covariance: need n >= 2");
  Eigen::VectorXd means(k);
  for (int j = 0; j < k; ++j) means[j] = block_mean(m.col(j).data(), n, exec);
  SymmetricMatrix out(k);
  for (int i = 0; i < k; ++i) {
    const double* ci = m.col(i).data();
    const double mi = means[i];
    for (int j = 0; j <= i; ++j) {
      const double* cj = m.col(j).data();
      const double mj = means[j];
      const double s = block_sum_fn(
          n, [&](std::int64_t r) { return (ci[r] - mi) * (cj[r] - mj); }, exec);
      out.set(i, j, s / static_cast<double>(n));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t& s) {
  std::uint64_t z = (s += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t master_seed, std::uint64_t stream) {
  std::uint64_t s = master_seed;
  std::uint64_t t = stream;
  std::uint64_t mix = splitmix64(s) ^ rotl(splitmix64(t), 17);
  for (auto& word : state_) word = splitmix64(mix);
  if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
}

std::uint64_t Rng::next() {
  const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double mul = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * mul;
  has_spare_ = true;
  return u * mul;
}

bool Rng::bernoulli(double p) { return uniform() < p; }

std::int64_t Rng::below(std::int64_t n) {
  return static_cast<std::int64_t>(
      (static_cast<unsigned __int128>(next()) * static_cast<unsigned __int128>(n)) >> 64);
}

}  // namespace mote::mathkit
