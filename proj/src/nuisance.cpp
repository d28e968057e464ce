#include "mote/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <sstream>

namespace mote {

namespace {

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& design) {
  Eigen::MatrixXd a(design.rows(), design.cols() + 1);
  a.col(0).setOnes();
  a.rightCols(design.cols()) = design;
  return a;
}

std::string collinear_column_list(const Eigen::ColPivHouseholderQR<Eigen::MatrixXd>& qr,
                                  const std::vector<std::string>* names) {
  std::ostringstream out;
  const auto perm = qr.colsPermutation().indices();
  for (Eigen::Index j = qr.rank(); j < perm.size(); ++j) {
    const Eigen::Index col = perm[j];
    if (j > qr.rank()) out << ", ";
    if (col == 0) {
      out << "intercept";
    } else if (names != nullptr && col - 1 < static_cast<Eigen::Index>(names->size())) {
      out << "'" << (*names)[static_cast<std::size_t>(col - 1)] << "'";
    } else {
      out << "column " << col;
    }
  }
  return out.str();
}

double expit(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

FitResult fit_linear(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                     const Eigen::VectorXd* weights,
                     const std::vector<std::string>* column_names) {
  const Eigen::Index n = design.rows();
  const Eigen::Index q = design.cols();
  if (response.size() != n) throw DataError("fit_linear: design/response size mismatch");
  if (n <= q) throw DataError("fit_linear: need more rows than features");
  if (weights != nullptr && weights->size() != n) {
    throw DataError("fit_linear: weight vector size mismatch");
  }

  Eigen::MatrixXd a = with_intercept(design);
  Eigen::VectorXd y = response;
  if (weights != nullptr) {
    const Eigen::VectorXd sw = weights->cwiseMax(0.0).cwiseSqrt();
    a.array().colwise() *= sw.array();
    y.array() *= sw.array();
  }

  FitResult fit;
  fit.iterations = 1;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() == a.cols()) {
    fit.coefficients = qr.solve(y);
  } else {
    // Ridge fallback for collinear designs; the intercept stays unpenalized.
    Eigen::MatrixXd gram = a.transpose() * a;
    for (Eigen::Index j = 1; j < gram.rows(); ++j) gram(j, j) += 1e-8;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    fit.coefficients = ldlt.solve(a.transpose() * y);
    if (ldlt.info() != Eigen::Success || !fit.coefficients.allFinite()) {
      throw NumericError("fit_linear: design is rank deficient beyond ridge fallback; "
                         "collinear columns: " +
                         collinear_column_list(qr, column_names));
    }
  }
  fit.objective = (a * fit.coefficients - y).squaredNorm();
  return fit;
}

FitResult fit_logistic(const Eigen::MatrixXd& design, const Eigen::VectorXd& response01) {
  const Eigen::Index n = design.rows();
  if (response01.size() != n) throw DataError("fit_logistic: design/response size mismatch");
  double ones = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double y = response01[i];
    if (y != 0.0 && y != 1.0) throw DataError("fit_logistic: response must be 0/1");
    ones += y;
  }
  if (ones == 0.0 || ones == static_cast<double>(n)) {
    throw DataError("fit_logistic: single-class response");
  }

  const Eigen::MatrixXd a = with_intercept(design);
  const Eigen::Index q = a.cols();
  FitResult fit;
  fit.coefficients = Eigen::VectorXd::Zero(q);
  constexpr double kScoreTol = 1e-8;
  constexpr int kMaxIter = 100;
  constexpr double kProbFloor = 1e-12;

  if (q == 1) {
    // intercept-only MLE is the class share
    const double share = ones / static_cast<double>(n);
    fit.coefficients[0] = std::log(share / (1.0 - share));
    fit.converged = true;
    fit.iterations = 1;
    fit.objective = -2.0 * (ones * std::log(share) +
                            (static_cast<double>(n) - ones) * std::log(1.0 - share));
    return fit;
  }
  // fitted logits beyond this put probabilities at the double-precision
  // boundary; a zero score out there is (quasi-)separation, not an MLE
  constexpr double kLogitBound = 30.0;

  Eigen::VectorXd eta(n), p(n), w(n);
  fit.converged = false;
  for (int iter = 1; iter <= kMaxIter; ++iter) {
    fit.iterations = iter;
    eta = a * fit.coefficients;
    for (Eigen::Index i = 0; i < n; ++i) {
      p[i] = std::clamp(expit(eta[i]), kProbFloor, 1.0 - kProbFloor);
      w[i] = p[i] * (1.0 - p[i]);
    }
    const Eigen::VectorXd score = a.transpose() * (response01 - p);
    if (score.cwiseAbs().maxCoeff() < kScoreTol &&
        eta.cwiseAbs().maxCoeff() <= kLogitBound) {
      fit.converged = true;
      break;
    }
    // Weighted least squares on the working response.
    const Eigen::VectorXd sw = w.cwiseSqrt();
    Eigen::MatrixXd aw = a;
    aw.array().colwise() *= sw.array();
    const Eigen::VectorXd z = eta + (response01 - p).cwiseQuotient(w);
    const Eigen::VectorXd zw = z.cwiseProduct(sw);
    Eigen::VectorXd next = Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(aw).solve(zw);
    if (!next.allFinite()) break;
    fit.coefficients = next;
  }

  eta = a * fit.coefficients;
  double deviance = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double pi = std::clamp(expit(eta[i]), kProbFloor, 1.0 - kProbFloor);
    deviance -= 2.0 * (response01[i] * std::log(pi) + (1.0 - response01[i]) * std::log(1.0 - pi));
  }
  fit.objective = deviance;
  return fit;
}

Eigen::VectorXd predict_linear(const FitResult& fit, const Eigen::MatrixXd& design) {
  return with_intercept(design) * fit.coefficients;
}

Eigen::VectorXd predict_logistic(const FitResult& fit, const Eigen::MatrixXd& design) {
  Eigen::VectorXd eta = with_intercept(design) * fit.coefficients;
  for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] = expit(eta[i]);
  return eta;
}

namespace {

struct SpecIndex {
  const ModelSpec* propensity = nullptr;
  std::vector<const ModelSpec*> mean;    // per outcome, may stay null
  std::vector<const ModelSpec*> second;  // per outcome
  bool wants_outcome_models = false;
};

SpecIndex index_specs(const std::vector<ModelSpec>& specs, int num_outcomes) {
  SpecIndex idx;
  idx.mean.assign(static_cast<std::size_t>(num_outcomes), nullptr);
  idx.second.assign(static_cast<std::size_t>(num_outcomes), nullptr);
  for (const auto& spec : specs) {
    switch (spec.target) {
      case Target::propensity:
        idx.propensity = &spec;
        break;
      case Target::outcome_mean:
      case Target::second_moment: {
        idx.wants_outcome_models = true;
        if (spec.outcome < 0 || spec.outcome >= num_outcomes) {
          throw DataError("nuisance spec references outcome index " +
                          std::to_string(spec.outcome + 1) + " outside 1.." +
                          std::to_string(num_outcomes));
        }
        auto& slot = (spec.target == Target::outcome_mean)
                         ? idx.mean[static_cast<std::size_t>(spec.outcome)]
                         : idx.second[static_cast<std::size_t>(spec.outcome)];
        slot = &spec;
        break;
      }
      case Target::cdf:
        break;  // fitted on demand by fit_cdf_surface
    }
  }
  if (idx.propensity == nullptr) {
    throw DataError("nuisance specs are missing the propensity target");
  }
  if (idx.wants_outcome_models) {
    for (int k = 0; k < num_outcomes; ++k) {
      if (idx.mean[static_cast<std::size_t>(k)] == nullptr) {
        throw DataError("nuisance specs are missing the outcome-mean target for outcome " +
                        std::to_string(k + 1));
      }
      if (idx.second[static_cast<std::size_t>(k)] == nullptr) {
        throw DataError("nuisance specs are missing the second-moment target for outcome " +
                        std::to_string(k + 1));
      }
    }
  }
  return idx;
}

std::vector<std::int64_t> arm_rows(const Dataset& data, const std::vector<std::int64_t>& rows,
                                   int arm) {
  std::vector<std::int64_t> out;
  out.reserve(rows.size());
  for (const auto i : rows) {
    if (data.arm(i) == arm) out.push_back(i);
  }
  return out;
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const std::vector<std::int64_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = m.row(rows[r]);
  }
  return out;
}

Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<std::int64_t>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) out[static_cast<Eigen::Index>(r)] = v[rows[r]];
  return out;
}

NuisanceFits oracle_fits(const Dataset& data, const NuisanceSetup& setup) {
  const OracleNuisances& oracle = *setup.oracle;
  if (!oracle.propensity) {
    throw DataError("oracle nuisances must provide a propensity function");
  }
  const std::int64_t n = data.n();
  const int num_k = data.num_outcomes();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  NuisanceFits fits;
  fits.clip_bound = setup.clip;
  fits.propensity.resize(n);
  // Surfaces without an oracle stay NaN so accidental use is visible.
  fits.outcome_mean[0].setConstant(n, num_k, nan);
  fits.outcome_mean[1].setConstant(n, num_k, nan);
  fits.second_moment.setConstant(n, num_k, nan);
  for (std::int64_t i = 0; i < n; ++i) {
    const auto row = data.covariates.row(i).transpose();
    fits.propensity[i] = std::clamp(oracle.propensity(row), setup.clip, 1.0 - setup.clip);
    for (int k = 0; k < num_k; ++k) {
      if (oracle.outcome_mean) {
        fits.outcome_mean[0](i, k) = oracle.outcome_mean(row, k, 0);
        fits.outcome_mean[1](i, k) = oracle.outcome_mean(row, k, 1);
      }
      if (oracle.second_moment) {
        fits.second_moment(i, k) = oracle.second_moment(row, k);
      }
    }
  }
  return fits;
}

}  // namespace

NuisanceFits fit_nuisances(const Dataset& data, const NuisanceSetup& setup) {
  if (!(setup.clip > 0.0 && setup.clip < 0.5)) {
    throw DataError("clip bound must lie in (0, 0.5)");
  }
  if (setup.oracle != nullptr) return oracle_fits(data, setup);

  const std::int64_t n = data.n();
  const int num_k = data.num_outcomes();
  const SpecIndex idx = index_specs(setup.specs, num_k);

  const int folds = setup.cross_fit_folds.value_or(1);
  if (setup.cross_fit_folds && folds < 2) {
    throw DataError("cross_fit_folds must be >= 2");
  }
  if (folds > n) throw DataError("more cross-fitting folds than units");

  NuisanceFits fits;
  fits.clip_bound = setup.clip;
  fits.propensity.resize(n);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  fits.outcome_mean[0].setConstant(n, num_k, nan);
  fits.outcome_mean[1].setConstant(n, num_k, nan);
  fits.second_moment.setConstant(n, num_k, nan);

  const Eigen::MatrixXd prop_x = data.covariate_block(idx.propensity->feature_columns);

  // Per fold: train on the complement, predict the fold. folds == 1 trains
  // and predicts on the full sample.
  for (int f = 0; f < folds; ++f) {
    std::vector<std::int64_t> train_rows, eval_rows;
    if (folds == 1) {
      train_rows.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) train_rows[static_cast<std::size_t>(i)] = i;
      eval_rows = train_rows;
    } else {
      for (std::int64_t i = 0; i < n; ++i) {
        (i % folds == f ? eval_rows : train_rows).push_back(i);
      }
    }

    const auto train_control = arm_rows(data, train_rows, 0);
    const auto train_treated = arm_rows(data, train_rows, 1);
    if (train_control.empty() || train_treated.empty()) {
      throw DataError("cross-fitting fold " + std::to_string(f + 1) +
                      " leaves a training set with an empty arm");
    }

    const FitResult prop_fit =
        fit_logistic(gather_rows(prop_x, train_rows), gather(data.treatment, train_rows));
    if (!prop_fit.converged) {
      fits.warnings.push_back("propensity fit hit the iteration cap (possible separation)");
    }
    const Eigen::VectorXd prop_pred =
        predict_logistic(prop_fit, gather_rows(prop_x, eval_rows));
    for (std::size_t r = 0; r < eval_rows.size(); ++r) {
      fits.propensity[eval_rows[r]] =
          std::clamp(prop_pred[static_cast<Eigen::Index>(r)], setup.clip, 1.0 - setup.clip);
    }

    if (!idx.wants_outcome_models) continue;
    for (int k = 0; k < num_k; ++k) {
      const ModelSpec& mean_spec = *idx.mean[static_cast<std::size_t>(k)];
      const ModelSpec& second_spec = *idx.second[static_cast<std::size_t>(k)];
      const Eigen::MatrixXd mean_x = data.covariate_block(mean_spec.feature_columns);
      const Eigen::MatrixXd second_x = data.covariate_block(second_spec.feature_columns);
      const Eigen::VectorXd y = data.outcomes.col(k);

      for (int arm = 0; arm < 2; ++arm) {
        const auto& rows = arm == 0 ? train_control : train_treated;
        const FitResult fit = mean_spec.effective_family() == Family::linear
                                  ? fit_linear(gather_rows(mean_x, rows), gather(y, rows),
                                               nullptr, &mean_spec.feature_columns)
                                  : fit_logistic(gather_rows(mean_x, rows), gather(y, rows));
        const Eigen::VectorXd pred =
            mean_spec.effective_family() == Family::linear
                ? predict_linear(fit, gather_rows(mean_x, eval_rows))
                : predict_logistic(fit, gather_rows(mean_x, eval_rows));
        for (std::size_t r = 0; r < eval_rows.size(); ++r) {
          fits.outcome_mean[static_cast<std::size_t>(arm)](eval_rows[r], k) =
              pred[static_cast<Eigen::Index>(r)];
        }
      }

      const Eigen::VectorXd y2 = y.cwiseProduct(y);
      const FitResult second_fit =
          fit_linear(gather_rows(second_x, train_control), gather(y2, train_control), nullptr,
                     &second_spec.feature_columns);
      const Eigen::VectorXd pred = predict_linear(second_fit, gather_rows(second_x, eval_rows));
      for (std::size_t r = 0; r < eval_rows.size(); ++r) {
        fits.second_moment(eval_rows[r], k) = pred[static_cast<Eigen::Index>(r)];
      }
    }
  }
  return fits;
}

CdfSurface fit_cdf_surface(const Dataset& data, int outcome, const Eigen::VectorXd& grid,
                           int arm, const ModelSpec& spec, Exec exec) {
  if (grid.size() == 0) throw DataError("fit_cdf_surface: empty grid");
  for (Eigen::Index g = 1; g < grid.size(); ++g) {
    if (grid[g] < grid[g - 1]) throw DataError("fit_cdf_surface: grid must be sorted ascending");
  }
  const std::int64_t n = data.n();
  std::vector<std::int64_t> all_rows(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) all_rows[static_cast<std::size_t>(i)] = i;
  const auto rows = arm_rows(data, all_rows, arm);
  if (rows.empty()) throw DataError("fit_cdf_surface: arm has no units");

  const Eigen::MatrixXd x = data.covariate_block(spec.feature_columns);
  const Eigen::MatrixXd x_arm = gather_rows(x, rows);
  const Eigen::VectorXd y_arm = gather(data.outcomes.col(outcome), rows);

  CdfSurface surface;
  surface.grid = grid;
  surface.values.resize(n, grid.size());

  std::exception_ptr failure = nullptr;
  std::mutex failure_mutex;
  parallel_for(
      grid.size(),
      [&](std::int64_t g) {
        try {
          const double threshold = grid[g];
          Eigen::VectorXd indicator(x_arm.rows());
          double ones = 0.0;
          for (Eigen::Index r = 0; r < x_arm.rows(); ++r) {
            indicator[r] = y_arm[r] <= threshold ? 1.0 : 0.0;
            ones += indicator[r];
          }
          if (ones == 0.0) {
            surface.values.col(g).setZero();
          } else if (ones == static_cast<double>(x_arm.rows())) {
            surface.values.col(g).setOnes();
          } else {
            const FitResult fit = fit_logistic(x_arm, indicator);
            surface.values.col(g) = predict_logistic(fit, x);
          }
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      },
      exec);
  if (failure) std::rethrow_exception(failure);

  // Running maximum along the grid keeps each unit's curve a CDF.
  parallel_for(
      n,
      [&](std::int64_t i) {
        double running = 0.0;
        for (Eigen::Index g = 0; g < surface.values.cols(); ++g) {
          running = std::max(running, std::clamp(surface.values(i, g), 0.0, 1.0));
          surface.values(i, g) = running;
        }
      },
      exec);
  return surface;
}

CdfSurface oracle_cdf_surface(const Dataset& data, int outcome, const Eigen::VectorXd& grid,
                              int arm, const OracleNuisances& oracle, Exec exec) {
  if (!oracle.cdf) throw DataError("oracle nuisances do not provide a cdf function");
  CdfSurface surface;
  surface.grid = grid;
  surface.values.resize(data.n(), grid.size());
  parallel_for(
      data.n(),
      [&](std::int64_t i) {
        const auto row = data.covariates.row(i).transpose();
        double running = 0.0;
        for (Eigen::Index g = 0; g < grid.size(); ++g) {
          const double v = std::clamp(oracle.cdf(row, outcome, arm, grid[g]), 0.0, 1.0);
          running = std::max(running, v);
          surface.values(i, g) = running;
        }
      },
      exec);
  return surface;
}

}  // namespace mote
