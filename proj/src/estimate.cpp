#include "mote/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <sstream>

#include "mote/mathkit.hpp"

namespace mote {

namespace {

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DataError("alpha must lie in (0, 1)");
}

Eigen::VectorXd column_means(const Eigen::MatrixXd& m, Exec exec) {
  Eigen::VectorXd out(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    out[j] = block_mean(m.col(j).data(), m.rows(), exec);
  }
  return out;
}

EffectTable make_table(const Eigen::VectorXd& estimates,
                       const mathkit::SymmetricMatrix& covariance, std::int64_t n,
                       double alpha, std::vector<std::string> labels) {
  EffectTable table;
  table.estimates = estimates;
  table.covariance = covariance;
  table.alpha = alpha;
  table.labels = std::move(labels);
  const int k = static_cast<int>(estimates.size());
  table.std_errors.resize(k);
  table.ci_lower.resize(k);
  table.ci_upper.resize(k);
  const double z = mathkit::normal_quantile(1.0 - alpha / 2.0);
  for (int j = 0; j < k; ++j) {
    table.std_errors[j] = std::sqrt(std::max(0.0, covariance(j, j)) / static_cast<double>(n));
    table.ci_lower[j] = estimates[j] - z * table.std_errors[j];
    table.ci_upper[j] = estimates[j] + z * table.std_errors[j];
  }
  return table;
}

}  // namespace

MomentEstimates estimate_moments(const IfComponents& components, Exec exec) {
  MomentEstimates m;
  m.beta0 = column_means(components.phi0, exec);
  m.beta1 = column_means(components.phi1, exec);
  m.beta2 = column_means(components.phi2, exec);
  return m;
}

MomentEstimates estimate_moments(const Dataset& data, const NuisanceFits& fits, Exec exec) {
  return estimate_moments(compute_components(data, fits, exec), exec);
}

ScaledEffects estimate_scaled_effects(const Dataset& data, const NuisanceFits& fits,
                                      double alpha, Exec exec) {
  check_alpha(alpha);
  const IfComponents components = compute_components(data, fits, exec);
  ScaledEffects out;
  out.moments = estimate_moments(components, exec);
  out.moments.require_nondegenerate(data.outcome_names);

  const int num_k = out.moments.num_outcomes();
  Eigen::VectorXd psi(num_k);
  for (int k = 0; k < num_k; ++k) {
    psi[k] = (out.moments.beta1[k] - out.moments.beta0[k]) /
             std::sqrt(out.moments.control_variance(k));
  }
  out.eif = eif_scaled(components, out.moments, psi, exec);
  const auto covariance = mathkit::empirical_covariance(out.eif.values, exec);
  out.table = make_table(psi, covariance, data.n(), alpha, data.outcome_names);
  return out;
}

CdfEstimate estimate_cdf(const Dataset& data, const NuisanceFits& fits, int outcome, int arm,
                         Exec exec) {
  const CdfSurface& surface = fits.cdf_surface(outcome, arm);
  const std::int64_t n = data.n();
  const Eigen::Index num_g = surface.grid.size();
  CdfEstimate cdf;
  cdf.grid = surface.grid;
  cdf.values.resize(num_g);
  cdf.arm = arm;
  cdf.outcome = outcome;
  const double* y = data.outcomes.col(outcome).data();
  parallel_for(
      num_g,
      [&, y](std::int64_t g) {
        const double* nu = surface.values.col(g).data();
        const double threshold = surface.grid[g];
        const double sum = block_sum_fn(
            n,
            [&](std::int64_t i) {
              const double v = nu[i];
              if (data.arm(i) == arm) {
                return ((y[i] <= threshold ? 1.0 : 0.0) - v) / fits.prop(i, arm) + v;
              }
              return v;
            },
            Exec::serial);
        cdf.values[g] = sum / static_cast<double>(n);
      },
      exec);
  double running = 0.0;
  for (Eigen::Index g = 0; g < num_g; ++g) {
    running = std::max(running, std::clamp(cdf.values[g], 0.0, 1.0));
    cdf.values[g] = running;
  }
  return cdf;
}

double invert_cdf(const CdfEstimate& cdf, double q) {
  if (!(q > 0.0 && q < 1.0)) throw DataError("invert_cdf: q must lie in (0, 1)");
  for (Eigen::Index g = 0; g < cdf.grid.size(); ++g) {
    if (cdf.values[g] >= q) return cdf.grid[g];
  }
  throw NumericError("invert_cdf: grid does not bracket quantile " + std::to_string(q));
}

namespace {

// Type-1 empirical quantile grid over the pooled outcome, deduplicated.
Eigen::VectorXd quantile_grid(const Eigen::VectorXd& y, int grid_size) {
  if (grid_size < 2) throw DataError("quantile grid needs at least 2 points");
  std::vector<double> sorted(y.data(), y.data() + y.size());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(grid_size));
  for (int j = 0; j < grid_size; ++j) {
    const double p = static_cast<double>(j) / (grid_size - 1);
    std::size_t idx = 0;
    if (p > 0.0) {
      idx = static_cast<std::size_t>(std::ceil(n * p)) - 1;
      idx = std::min(idx, sorted.size() - 1);
    }
    const double value = sorted[idx];
    if (grid.empty() || value > grid.back()) grid.push_back(value);
  }
  return Eigen::Map<Eigen::VectorXd>(grid.data(), static_cast<Eigen::Index>(grid.size()));
}

const ModelSpec* find_cdf_spec(const NuisanceSetup& setup, int outcome) {
  for (const auto& spec : setup.specs) {
    if (spec.target == Target::cdf && (spec.outcome == outcome || spec.outcome < 0)) {
      return &spec;
    }
  }
  return nullptr;
}

// Streaming counterpart of fit_cdf_surface + estimate_cdf: sweeps the grid
// in fixed blocks, carrying the per-unit running maximum, so memory stays
// O(n * block) for any grid size. Produces the same values as the
// materialized pair. kept holds the monotone per-unit nu columns at the
// requested grid indices.
struct StreamedCdf {
  Eigen::VectorXd values;
  std::map<Eigen::Index, Eigen::VectorXd> kept;
};

constexpr Eigen::Index kCdfBlock = 64;

StreamedCdf streamed_cdf(const Dataset& data, const NuisanceFits& fits,
                         const NuisanceSetup& setup, int outcome, int arm,
                         const Eigen::VectorXd& grid,
                         const std::vector<Eigen::Index>& keep, Exec exec) {
  const std::int64_t n = data.n();
  const Eigen::Index num_g = grid.size();
  const bool use_oracle = setup.oracle != nullptr && static_cast<bool>(setup.oracle->cdf);
  const ModelSpec* spec = nullptr;
  Eigen::MatrixXd x, x_arm;
  Eigen::VectorXd y_arm;
  if (!use_oracle) {
    spec = find_cdf_spec(setup, outcome);
    if (spec == nullptr) {
      throw DataError("no cdf nuisance spec for outcome " + std::to_string(outcome + 1));
    }
    x = data.covariate_block(spec->feature_columns);
    std::vector<std::int64_t> rows;
    for (std::int64_t i = 0; i < n; ++i) {
      if (data.arm(i) == arm) rows.push_back(i);
    }
    if (rows.empty()) throw DataError("cdf estimation: arm has no units");
    x_arm.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
    y_arm.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      x_arm.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]);
      y_arm[static_cast<Eigen::Index>(r)] = data.outcomes(rows[r], outcome);
    }
  }

  StreamedCdf out;
  out.values.resize(num_g);
  Eigen::VectorXd running = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd buffer(n, std::min(kCdfBlock, num_g));
  const double* y = data.outcomes.col(outcome).data();

  std::exception_ptr failure = nullptr;
  std::mutex failure_mutex;
  for (Eigen::Index start = 0; start < num_g; start += kCdfBlock) {
    const Eigen::Index width = std::min(kCdfBlock, num_g - start);
    parallel_for(
        width,
        [&](std::int64_t j) {
          try {
            const double threshold = grid[start + j];
            if (use_oracle) {
              for (std::int64_t i = 0; i < n; ++i) {
                buffer(i, j) = setup.oracle->cdf(data.covariates.row(i).transpose(), outcome,
                                                 arm, threshold);
              }
              return;
            }
            Eigen::VectorXd indicator(x_arm.rows());
            double ones = 0.0;
            for (Eigen::Index r = 0; r < x_arm.rows(); ++r) {
              indicator[r] = y_arm[r] <= threshold ? 1.0 : 0.0;
              ones += indicator[r];
            }
            if (ones == 0.0) {
              buffer.col(j).setZero();
            } else if (ones == static_cast<double>(x_arm.rows())) {
              buffer.col(j).setOnes();
            } else {
              const FitResult fit = fit_logistic(x_arm, indicator);
              buffer.col(j) = predict_logistic(fit, x);
            }
          } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        },
        exec);
    if (failure) std::rethrow_exception(failure);

    // per-unit running maximum across the block, then marginal means
    parallel_for(
        n,
        [&](std::int64_t i) {
          double local = running[i];
          for (Eigen::Index j = 0; j < width; ++j) {
            local = std::max(local, std::clamp(buffer(i, j), 0.0, 1.0));
            buffer(i, j) = local;
          }
          running[i] = local;
        },
        exec);
    parallel_for(
        width,
        [&](std::int64_t j) {
          const double* nu = buffer.col(j).data();
          const double threshold = grid[start + j];
          const double sum = block_sum_fn(
              n,
              [&](std::int64_t i) {
                const double v = nu[i];
                if (data.arm(i) == arm) {
                  return ((y[i] <= threshold ? 1.0 : 0.0) - v) / fits.prop(i, arm) + v;
                }
                return v;
              },
              Exec::serial);
          out.values[start + j] = sum / static_cast<double>(n);
        },
        exec);
    for (const Eigen::Index g : keep) {
      if (g >= start && g < start + width) out.kept[g] = buffer.col(g - start);
    }
  }

  double running_f = 0.0;
  for (Eigen::Index g = 0; g < num_g; ++g) {
    running_f = std::max(running_f, std::clamp(out.values[g], 0.0, 1.0));
    out.values[g] = running_f;
  }
  return out;
}

struct QuantilePoint {
  double psi = 0.0;
  Eigen::Vector4d xi;
  std::array<Eigen::Index, 4> xi_index;  // positions of xi in the grid
};

double invert_on_grid(const Eigen::VectorXd& grid, const Eigen::VectorXd& values, double q,
                      Eigen::Index* index) {
  for (Eigen::Index g = 0; g < grid.size(); ++g) {
    if (values[g] >= q) {
      if (index != nullptr) *index = g;
      return grid[g];
    }
  }
  throw NumericError("quantile effect: grid does not bracket quantile " + std::to_string(q));
}

QuantilePoint quantile_point(const Dataset& data, const NuisanceFits& fits,
                             const NuisanceSetup& setup, int outcome,
                             const Eigen::VectorXd& grid, Exec exec) {
  const StreamedCdf f1 = streamed_cdf(data, fits, setup, outcome, 1, grid, {}, exec);
  const StreamedCdf f0 = streamed_cdf(data, fits, setup, outcome, 0, grid, {}, exec);
  QuantilePoint point;
  point.xi[0] = invert_on_grid(grid, f1.values, 0.50, &point.xi_index[0]);
  point.xi[1] = invert_on_grid(grid, f0.values, 0.50, &point.xi_index[1]);
  point.xi[2] = invert_on_grid(grid, f0.values, 0.75, &point.xi_index[2]);
  point.xi[3] = invert_on_grid(grid, f0.values, 0.25, &point.xi_index[3]);
  const double iqr = point.xi[2] - point.xi[3];
  if (!(iqr > 0.0)) throw NumericError("quantile effect: control interquartile range is zero");
  point.psi = (point.xi[0] - point.xi[1]) / iqr;
  return point;
}

// Gaussian kernel density with Silverman bandwidth, over one arm's outcomes.
double kde_at(const std::vector<double>& sample, double x) {
  const auto m = static_cast<double>(sample.size());
  if (sample.size() < 2) throw NumericError("density estimate needs at least 2 points");
  double mean = 0.0;
  for (double v : sample) mean += v;
  mean /= m;
  double ss = 0.0;
  for (double v : sample) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (m - 1.0));
  std::vector<double> sorted(sample);
  std::sort(sorted.begin(), sorted.end());
  const auto order_stat = [&](double p) {
    std::size_t idx = static_cast<std::size_t>(std::ceil(m * p)) - 1;
    return sorted[std::min(idx, sorted.size() - 1)];
  };
  const double iqr = order_stat(0.75) - order_stat(0.25);
  double spread = std::min(sd, iqr / 1.349);
  if (spread <= 0.0) spread = std::max(sd, iqr / 1.349);
  const double h = 0.9 * spread * std::pow(m, -0.2);
  if (!(h > 0.0)) throw NumericError("degenerate density bandwidth");
  double acc = 0.0;
  const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  for (double v : sample) {
    const double u = (x - v) / h;
    acc += norm * std::exp(-0.5 * u * u);
  }
  return acc / (m * h);
}

}  // namespace

QuantileEffect estimate_quantile_effect(const Dataset& data, const NuisanceSetup& setup,
                                        int outcome, const QuantileOptions& options) {
  check_alpha(options.alpha);
  const std::int64_t n = data.n();
  const Eigen::VectorXd grid = quantile_grid(data.outcomes.col(outcome), options.grid_size);

  NuisanceFits fits = fit_nuisances(data, setup);
  const QuantilePoint point = quantile_point(data, fits, setup, outcome, grid, options.exec);

  QuantileEffect effect;
  effect.estimate = point.psi;
  effect.xi = point.xi;
  effect.ci_method = options.ci;
  const double z = mathkit::normal_quantile(1.0 - options.alpha / 2.0);

  if (options.ci == QuantileCi::closed_form) {
    std::vector<double> arm_sample[2];
    for (std::int64_t i = 0; i < n; ++i) {
      arm_sample[data.arm(i)].push_back(data.outcomes(i, outcome));
    }
    Eigen::Vector4d density;
    density[0] = kde_at(arm_sample[1], point.xi[0]);
    for (int j = 1; j < 4; ++j) density[j] = kde_at(arm_sample[0], point.xi[j]);

    // second sweep to pick up the per-unit nu columns at the quantiles
    const StreamedCdf f1 = streamed_cdf(data, fits, setup, outcome, 1, grid,
                                        {point.xi_index[0]}, options.exec);
    const StreamedCdf f0 = streamed_cdf(
        data, fits, setup, outcome, 0, grid,
        {point.xi_index[1], point.xi_index[2], point.xi_index[3]}, options.exec);
    std::array<Eigen::VectorXd, 4> phi_grid;
    static constexpr std::array<int, 4> kArms = {1, 0, 0, 0};
    for (int j = 0; j < 4; ++j) {
      const auto& kept = j == 0 ? f1.kept : f0.kept;
      phi_grid[static_cast<std::size_t>(j)] =
          phi_cdf_at(data, fits, outcome, kArms[static_cast<std::size_t>(j)], point.xi[j],
                     kept.at(point.xi_index[static_cast<std::size_t>(j)]), options.exec);
    }
    const Eigen::VectorXd eif = eif_quantile(phi_grid, point.xi, density, point.psi);
    const auto var = mathkit::empirical_covariance(eif, options.exec);
    effect.std_error = std::sqrt(var(0, 0) / static_cast<double>(n));
  } else {
    const int reps = options.bootstrap_reps;
    if (reps < 100) throw DataError("bootstrap needs at least 100 replicates");
    Eigen::VectorXd estimates(reps);
    std::vector<char> ok(static_cast<std::size_t>(reps), 0);
    parallel_for(
        reps,
        [&](std::int64_t b) {
          mathkit::Rng rng(options.seed, static_cast<std::uint64_t>(b) + 1);
          for (int attempt = 0; attempt < 10; ++attempt) {
            std::vector<std::int64_t> rows(static_cast<std::size_t>(n));
            std::int64_t treated = 0;
            for (auto& r : rows) {
              r = rng.below(n);
              treated += data.arm(r);
            }
            if (treated == 0 || treated == n) continue;
            try {
              const Dataset resample = resample_rows(data, rows);
              NuisanceFits refit = fit_nuisances(resample, setup);
              estimates[b] =
                  quantile_point(resample, refit, setup, outcome, grid, Exec::serial).psi;
              ok[static_cast<std::size_t>(b)] = 1;
              return;
            } catch (const NumericError&) {
              continue;  // degenerate resample; redraw
            }
          }
        },
        options.exec);
    std::vector<double> kept;
    kept.reserve(static_cast<std::size_t>(reps));
    for (int b = 0; b < reps; ++b) {
      if (ok[static_cast<std::size_t>(b)]) kept.push_back(estimates[b]);
    }
    effect.excluded_replicates = reps - static_cast<int>(kept.size());
    if (kept.size() < static_cast<std::size_t>(reps) * 9 / 10 || kept.size() < 2) {
      throw NumericError("quantile bootstrap: too many degenerate resamples (" +
                         std::to_string(effect.excluded_replicates) + " of " +
                         std::to_string(reps) + ")");
    }
    double mean = 0.0;
    for (double v : kept) mean += v;
    mean /= static_cast<double>(kept.size());
    double ss = 0.0;
    for (double v : kept) ss += (v - mean) * (v - mean);
    effect.std_error = std::sqrt(ss / static_cast<double>(kept.size() - 1));
  }

  effect.ci_lower = effect.estimate - z * effect.std_error;
  effect.ci_upper = effect.estimate + z * effect.std_error;
  return effect;
}

namespace {

std::vector<double> distinct_sorted(const Eigen::VectorXd& v) {
  std::vector<double> values(v.data(), v.data() + v.size());
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  return values;
}

std::string format_value(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

}  // namespace

EffectModification estimate_effect_modification(const Dataset& data, const NuisanceFits& fits,
                                                const std::string& stratum_column, double alpha,
                                                bool marginal_sd, Exec exec) {
  check_alpha(alpha);
  const std::int64_t n = data.n();
  const int num_k = data.num_outcomes();
  const Eigen::VectorXd v_col = data.covariates.col(data.covariate_index(stratum_column));

  EffectModification out;
  out.marginal_sd = marginal_sd;
  out.stratum_values = distinct_sorted(v_col);
  const int num_v = static_cast<int>(out.stratum_values.size());
  out.stratum_of_unit.resize(static_cast<std::size_t>(n));
  std::vector<std::vector<std::int64_t>> rows_of(static_cast<std::size_t>(num_v));
  for (std::int64_t i = 0; i < n; ++i) {
    const auto it =
        std::lower_bound(out.stratum_values.begin(), out.stratum_values.end(), v_col[i]);
    const int v = static_cast<int>(it - out.stratum_values.begin());
    out.stratum_of_unit[static_cast<std::size_t>(i)] = v;
    rows_of[static_cast<std::size_t>(v)].push_back(i);
  }
  out.stratum_share.resize(num_v);
  for (int v = 0; v < num_v; ++v) {
    out.stratum_share[v] =
        static_cast<double>(rows_of[static_cast<std::size_t>(v)].size()) / static_cast<double>(n);
  }

  const IfComponents components = compute_components(data, fits, exec);
  MomentEstimates marginal;
  if (marginal_sd) {
    marginal = estimate_moments(components, exec);
    marginal.require_nondegenerate(data.outcome_names);
  }

  out.gamma.resize(num_k, num_v);
  out.stratum_eif.assign(static_cast<std::size_t>(num_k),
                         Eigen::MatrixXd::Zero(n, num_v));

  for (int v = 0; v < num_v; ++v) {
    const auto& rows = rows_of[static_cast<std::size_t>(v)];
    const auto nv = static_cast<std::int64_t>(rows.size());
    std::int64_t treated = 0;
    for (const auto i : rows) treated += data.arm(i);
    if (treated == 0 || treated == nv) {
      throw DataError("stratum " + stratum_column + " = " +
                      format_value(out.stratum_values[static_cast<std::size_t>(v)]) +
                      " has an empty " + (treated == 0 ? "treated" : "control") + " arm");
    }
    const double share = out.stratum_share[v];

    for (int k = 0; k < num_k; ++k) {
      const double* p0 = components.phi0.col(k).data();
      const double* p1 = components.phi1.col(k).data();
      const double* p2 = components.phi2.col(k).data();
      const auto stratum_mean = [&](const double* col) {
        return block_sum_fn(
                   nv, [&](std::int64_t r) { return col[rows[static_cast<std::size_t>(r)]]; },
                   exec) /
               static_cast<double>(nv);
      };
      const double b0v = stratum_mean(p0);
      const double b1v = stratum_mean(p1);
      const double numerator = b1v - b0v;

      double gamma_kv;
      Eigen::MatrixXd& eif = out.stratum_eif[static_cast<std::size_t>(k)];
      if (marginal_sd) {
        const double tau2 = marginal.control_variance(k);
        const double tau = std::sqrt(tau2);
        gamma_kv = numerator / tau;
        const double b0 = marginal.beta0[k];
        const double b2 = marginal.beta2[k];
        parallel_for(
            n,
            [&, p0, p1, p2](std::int64_t i) {
              double value = -gamma_kv / (2.0 * tau2) *
                             ((p2[i] - b2) - 2.0 * b0 * (p0[i] - b0));
              if (out.stratum_of_unit[static_cast<std::size_t>(i)] == v) {
                value += ((p1[i] - p0[i]) - numerator) / (share * tau);
              }
              eif(i, v) = value;
            },
            exec);
      } else {
        const double b2v = stratum_mean(p2);
        const double variance = b2v - b0v * b0v;
        if (!(variance > 1e-12)) {
          throw NumericError(
              "degenerate control variance for outcome '" +
              data.outcome_names[static_cast<std::size_t>(k)] + "' in stratum " +
              stratum_column + " = " +
              format_value(out.stratum_values[static_cast<std::size_t>(v)]));
        }
        const double sd = std::sqrt(variance);
        gamma_kv = numerator / sd;
        parallel_for(
            n,
            [&, p0, p1, p2](std::int64_t i) {
              if (out.stratum_of_unit[static_cast<std::size_t>(i)] != v) return;
              const double inner = (p1[i] - p0[i]) / sd -
                                   gamma_kv * (p2[i] + b2v - 2.0 * b0v * p0[i]) /
                                       (2.0 * variance);
              eif(i, v) = inner / share;
            },
            exec);
      }
      out.gamma(k, v) = gamma_kv;
    }
  }

  for (int v = 0; v < num_v; ++v) {
    Eigen::MatrixXd eif_v(n, num_k);
    for (int k = 0; k < num_k; ++k) {
      eif_v.col(k) = out.stratum_eif[static_cast<std::size_t>(k)].col(v);
    }
    const auto covariance = mathkit::empirical_covariance(eif_v, exec);
    std::vector<std::string> labels;
    for (int k = 0; k < num_k; ++k) {
      labels.push_back(data.outcome_names[static_cast<std::size_t>(k)] + " | " +
                       stratum_column + "=" +
                       format_value(out.stratum_values[static_cast<std::size_t>(v)]));
    }
    out.per_stratum.push_back(
        make_table(out.gamma.col(v), covariance, n, alpha, std::move(labels)));
  }
  return out;
}

RegressionEffectMod estimate_effect_modification_regression(
    const Dataset& data, const NuisanceFits& fits, const std::vector<std::string>& v_columns,
    bool project_linear) {
  const std::int64_t n = data.n();
  const int num_k = data.num_outcomes();
  const Eigen::MatrixXd v = data.covariate_block(v_columns);
  const IfComponents components = compute_components(data, fits);

  RegressionEffectMod out;
  out.gamma_hat.resize(n, num_k);
  for (int k = 0; k < num_k; ++k) {
    FitResult m1 = fit_linear(v, components.phi1.col(k), nullptr, &v_columns);
    FitResult m0 = fit_linear(v, components.phi0.col(k), nullptr, &v_columns);
    FitResult m2 = fit_linear(v, components.phi2.col(k), nullptr, &v_columns);
    const Eigen::VectorXd pred1 = predict_linear(m1, v);
    const Eigen::VectorXd pred0 = predict_linear(m0, v);
    const Eigen::VectorXd pred2 = predict_linear(m2, v);
    for (std::int64_t i = 0; i < n; ++i) {
      const double variance = pred2[i] - pred0[i] * pred0[i];
      if (!(variance > 1e-12)) {
        std::ostringstream msg;
        msg << "degenerate fitted control variance for outcome '"
            << data.outcome_names[static_cast<std::size_t>(k)] << "' at v = (";
        for (Eigen::Index j = 0; j < v.cols(); ++j) msg << (j ? ", " : "") << v(i, j);
        msg << ")";
        throw NumericError(msg.str());
      }
      out.gamma_hat(i, k) = (pred1[i] - pred0[i]) / std::sqrt(variance);
    }
    out.mean1_fits.push_back(std::move(m1));
    out.mean0_fits.push_back(std::move(m0));
    out.second_fits.push_back(std::move(m2));
    if (project_linear) {
      out.projection.push_back(fit_linear(v, out.gamma_hat.col(k), nullptr, &v_columns));
    }
  }
  return out;
}

void WeightFunction::set(int outcome, double stratum_value, double weight) {
  if (!(weight >= 0.0) || !std::isfinite(weight)) {
    throw DataError("weights must be finite and nonnegative");
  }
  table_[{outcome, stratum_value}] = weight;
}

double WeightFunction::operator()(int outcome, double stratum_value) const {
  const auto it = table_.find({outcome, stratum_value});
  return it == table_.end() ? 0.0 : it->second;
}

WeightedSummary estimate_weighted_summary(const Dataset& data, const NuisanceFits& fits,
                                          const std::string& stratum_column,
                                          const WeightFunction& weights, double alpha,
                                          Exec exec) {
  check_alpha(alpha);
  const int num_k = data.num_outcomes();
  const EffectModification mod =
      estimate_effect_modification(data, fits, stratum_column, alpha, false, exec);
  const int num_v = static_cast<int>(mod.stratum_values.size());

  for (const auto& [key, weight] : weights.entries()) {
    if (key.first < 0 || key.first >= num_k) {
      throw DataError("weight references outcome index " + std::to_string(key.first + 1) +
                      " outside 1.." + std::to_string(num_k));
    }
    if (weight > 0.0 &&
        !std::binary_search(mod.stratum_values.begin(), mod.stratum_values.end(), key.second)) {
      throw DataError("weight references empty stratum " + stratum_column + " = " +
                      format_value(key.second));
    }
  }

  Eigen::MatrixXd w(num_k, num_v);
  for (int k = 0; k < num_k; ++k) {
    for (int v = 0; v < num_v; ++v) {
      w(k, v) = weights(k, mod.stratum_values[static_cast<std::size_t>(v)]);
    }
  }

  double psi_star = 0.0;
  for (int k = 0; k < num_k; ++k) {
    for (int v = 0; v < num_v; ++v) {
      psi_star += mod.stratum_share[v] * w(k, v) * mod.gamma(k, v);
    }
  }

  WeightedSummary out;
  out.estimate = psi_star;
  out.eif = eif_weighted(mod.stratum_eif, mod.gamma, mod.stratum_of_unit, w,
                         mod.stratum_share, psi_star, exec);
  const auto var = mathkit::empirical_covariance(out.eif, exec);
  out.std_error = std::sqrt(var(0, 0) / static_cast<double>(data.n()));
  const double z = mathkit::normal_quantile(1.0 - alpha / 2.0);
  out.ci_lower = out.estimate - z * out.std_error;
  out.ci_upper = out.estimate + z * out.std_error;
  return out;
}

Dataset resample_rows(const Dataset& data, const std::vector<std::int64_t>& rows) {
  Dataset out;
  out.covariate_names = data.covariate_names;
  out.outcome_names = data.outcome_names;
  const auto m = static_cast<Eigen::Index>(rows.size());
  out.covariates.resize(m, data.covariates.cols());
  out.outcomes.resize(m, data.outcomes.cols());
  out.treatment.resize(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto i = rows[static_cast<std::size_t>(r)];
    out.covariates.row(r) = data.covariates.row(i);
    out.outcomes.row(r) = data.outcomes.row(i);
    out.treatment[r] = data.treatment[i];
  }
  return out;
}

mathkit::SymmetricMatrix bootstrap_covariance(const Dataset& data, const NuisanceSetup& setup,
                                              const BootstrapEstimand& estimand, int replicates,
                                              std::uint64_t seed, Exec exec) {
  if (replicates < 100) throw DataError("bootstrap_covariance needs at least 100 replicates");
  const std::int64_t n = data.n();
  const int width =
      estimand.kind == BootstrapEstimand::Kind::scaled_mean ? data.num_outcomes() : 1;

  Eigen::VectorXd quantile_grid_points;
  if (estimand.kind == BootstrapEstimand::Kind::quantile) {
    quantile_grid_points =
        quantile_grid(data.outcomes.col(estimand.outcome), estimand.grid_size);
  }

  Eigen::MatrixXd estimates(replicates, width);
  std::exception_ptr failure = nullptr;
  std::mutex failure_mutex;
  parallel_for(
      replicates,
      [&](std::int64_t b) {
        mathkit::Rng rng(seed, static_cast<std::uint64_t>(b) + 1);
        bool done = false;
        for (int attempt = 0; attempt < 10 && !done; ++attempt) {
          std::vector<std::int64_t> rows(static_cast<std::size_t>(n));
          std::int64_t treated = 0;
          for (auto& r : rows) {
            r = rng.below(n);
            treated += data.arm(r);
          }
          if (treated == 0 || treated == n) continue;
          try {
            const Dataset resample = resample_rows(data, rows);
            NuisanceFits refit = fit_nuisances(resample, setup);
            if (estimand.kind == BootstrapEstimand::Kind::scaled_mean) {
              MomentEstimates moments = estimate_moments(resample, refit, Exec::serial);
              moments.require_nondegenerate(resample.outcome_names);
              for (int k = 0; k < width; ++k) {
                estimates(b, k) = (moments.beta1[k] - moments.beta0[k]) /
                                  std::sqrt(moments.control_variance(k));
              }
            } else {
              estimates(b, 0) = quantile_point(resample, refit, setup, estimand.outcome,
                                               quantile_grid_points, Exec::serial)
                                    .psi;
            }
            done = true;
          } catch (const NumericError&) {
            continue;
          } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            return;
          }
        }
        if (!done) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) {
            failure = std::make_exception_ptr(NumericError(
                "bootstrap replicate " + std::to_string(b + 1) +
                " failed after 10 attempts (empty arm or degenerate resample)"));
          }
        }
      },
      exec);
  if (failure) std::rethrow_exception(failure);

  mathkit::SymmetricMatrix cov = mathkit::empirical_covariance(estimates, exec);
  mathkit::SymmetricMatrix scaled(width);
  for (int i = 0; i < width; ++i) {
    for (int j = 0; j <= i; ++j) scaled.set(i, j, cov(i, j) * static_cast<double>(n));
  }
  return scaled;
}

}  // namespace mote
