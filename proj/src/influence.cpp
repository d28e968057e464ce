#include "mote/influence.hpp"

#include <array>
#include <cmath>

namespace mote {

Eigen::VectorXd phi_a(const Dataset& data, const NuisanceFits& fits, int outcome, int arm,
                      Exec exec) {
  const std::int64_t n = data.n();
  Eigen::VectorXd out(n);
  const double* y = data.outcomes.col(outcome).data();
  const double* mu = fits.outcome_mean[static_cast<std::size_t>(arm)].col(outcome).data();
  parallel_for(
      n,
      [&, y, mu](std::int64_t i) {
        const double m = mu[i];
        if (data.arm(i) == arm) {
          out[i] = (y[i] - m) / fits.prop(i, arm) + m;
        } else {
          out[i] = m;
        }
      },
      exec);
  return out;
}

Eigen::VectorXd phi_2(const Dataset& data, const NuisanceFits& fits, int outcome, Exec exec) {
  const std::int64_t n = data.n();
  Eigen::VectorXd out(n);
  const double* y = data.outcomes.col(outcome).data();
  const double* eta = fits.second_moment.col(outcome).data();
  parallel_for(
      n,
      [&, y, eta](std::int64_t i) {
        const double e = eta[i];
        if (data.arm(i) == 0) {
          out[i] = (y[i] * y[i] - e) / fits.prop(i, 0) + e;
        } else {
          out[i] = e;
        }
      },
      exec);
  return out;
}

Eigen::VectorXd phi_cdf_at(const Dataset& data, const NuisanceFits& fits, int outcome,
                           int arm, double threshold, const Eigen::VectorXd& nu_at_y,
                           Exec exec) {
  const std::int64_t n = data.n();
  Eigen::VectorXd out(n);
  const double* y = data.outcomes.col(outcome).data();
  parallel_for(
      n,
      [&, y](std::int64_t i) {
        const double nu = nu_at_y[i];
        if (data.arm(i) == arm) {
          const double ind = y[i] <= threshold ? 1.0 : 0.0;
          out[i] = (ind - nu) / fits.prop(i, arm) + nu;
        } else {
          out[i] = nu;
        }
      },
      exec);
  return out;
}

Eigen::VectorXd phi_cdf(const Dataset& data, const NuisanceFits& fits, int outcome, int arm,
                        double threshold, Exec exec) {
  const CdfSurface& surface = fits.cdf_surface(outcome, arm);
  Eigen::Index g = -1;
  for (Eigen::Index j = 0; j < surface.grid.size(); ++j) {
    if (surface.grid[j] == threshold) {
      g = j;
      break;
    }
  }
  if (g < 0) {
    throw DataError("phi_cdf: threshold " + std::to_string(threshold) +
                    " is not a grid point of the fitted CDF surface");
  }
  return phi_cdf_at(data, fits, outcome, arm, threshold, surface.values.col(g), exec);
}

IfComponents compute_components(const Dataset& data, const NuisanceFits& fits, Exec exec) {
  const std::int64_t n = data.n();
  const int num_k = data.num_outcomes();
  IfComponents c;
  c.phi0.resize(n, num_k);
  c.phi1.resize(n, num_k);
  c.phi2.resize(n, num_k);
  for (int k = 0; k < num_k; ++k) {
    c.phi0.col(k) = phi_a(data, fits, k, 0, exec);
    c.phi1.col(k) = phi_a(data, fits, k, 1, exec);
    c.phi2.col(k) = phi_2(data, fits, k, exec);
  }
  return c;
}

Eigen::Vector3d grad_g(const Eigen::Vector3d& beta) {
  const double variance = beta[2] - beta[0] * beta[0];
  if (!(variance > 0.0)) throw NumericError("grad_g: degenerate control variance");
  const double sd = std::sqrt(variance);
  const double psi = (beta[1] - beta[0]) / sd;
  Eigen::Vector3d g;
  g[0] = (psi * beta[0] / sd - 1.0) / sd;
  g[1] = 1.0 / sd;
  g[2] = -psi / (2.0 * variance);
  return g;
}

InfluenceMatrix eif_scaled(const IfComponents& components, const MomentEstimates& beta,
                           const Eigen::VectorXd& psi, Exec exec) {
  const std::int64_t n = components.phi0.rows();
  const int num_k = static_cast<int>(components.phi0.cols());
  InfluenceMatrix out;
  out.kind = IfKind::scaled_mean;
  out.values.resize(n, num_k);
  for (int k = 0; k < num_k; ++k) {
    const double variance = beta.control_variance(k);
    if (!(variance > 0.0)) throw NumericError("eif_scaled: degenerate control variance");
    const double sd = std::sqrt(variance);
    const double b0 = beta.beta0[k];
    const double b2 = beta.beta2[k];
    const double scale2 = 2.0 * variance;
    const double psi_k = psi[k];
    const double* p0 = components.phi0.col(k).data();
    const double* p1 = components.phi1.col(k).data();
    const double* p2 = components.phi2.col(k).data();
    double* dst = out.values.col(k).data();
    parallel_for(
        n,
        [=](std::int64_t i) {
          dst[i] = (p1[i] - p0[i]) / sd - psi_k * (p2[i] + b2 - 2.0 * b0 * p0[i]) / scale2;
        },
        exec);
  }
  return out;
}

Eigen::VectorXd eif_quantile(const std::array<Eigen::VectorXd, 4>& phi_grid,
                             const Eigen::Vector4d& xi, const Eigen::Vector4d& density_at_xi,
                             double psi_q) {
  const double iqr = xi[2] - xi[3];
  if (!(iqr > 0.0)) throw NumericError("eif_quantile: control interquartile range is zero");
  for (int j = 0; j < 4; ++j) {
    if (!(density_at_xi[j] > 0.0)) {
      throw NumericError("eif_quantile: nonpositive density estimate at a fitted quantile");
    }
  }
  static constexpr std::array<double, 4> kLevels = {0.50, 0.50, 0.75, 0.25};
  const std::int64_t n = phi_grid[0].size();
  std::array<Eigen::VectorXd, 4> phi_q;
  for (int j = 0; j < 4; ++j) {
    phi_q[static_cast<std::size_t>(j)] =
        -(phi_grid[static_cast<std::size_t>(j)].array() - kLevels[static_cast<std::size_t>(j)]) /
        density_at_xi[j];
  }
  Eigen::VectorXd out(n);
  for (std::int64_t i = 0; i < n; ++i) {
    out[i] = ((phi_q[0][i] - phi_q[1][i]) - psi_q * (phi_q[2][i] - phi_q[3][i])) / iqr;
  }
  return out;
}

Eigen::VectorXd eif_weighted(const std::vector<Eigen::MatrixXd>& stratum_eif,
                             const Eigen::MatrixXd& gamma,
                             const std::vector<int>& stratum_of_unit,
                             const Eigen::MatrixXd& weights,
                             const Eigen::VectorXd& stratum_share, double psi_star,
                             Exec exec) {
  const auto n = static_cast<std::int64_t>(stratum_of_unit.size());
  const int num_k = static_cast<int>(stratum_eif.size());
  Eigen::VectorXd out(n);
  parallel_for(
      n,
      [&](std::int64_t i) {
        const int v = stratum_of_unit[static_cast<std::size_t>(i)];
        double acc = 0.0;
        for (int k = 0; k < num_k; ++k) {
          const double w = weights(k, v);
          if (w == 0.0) continue;
          acc += w * (stratum_share[v] * stratum_eif[static_cast<std::size_t>(k)](i, v) +
                      gamma(k, v));
        }
        out[i] = acc - psi_star;
      },
      exec);
  return out;
}

}  // namespace mote
