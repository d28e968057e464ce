#include "mote/sim.hpp"

#include <algorithm>
#include <cmath>

#include "mote/influence.hpp"
#include "mote/testing.hpp"

namespace mote::sim {

Correct correct_from_string(const std::string& label) {
  if (label == "both") return Correct::both;
  if (label == "trt") return Correct::trt;
  if (label == "out") return Correct::out;
  if (label == "none") return Correct::none;
  throw DataError("unknown scenario '" + label + "' (expected both, trt, out or none)");
}

std::string to_string(Correct c) {
  switch (c) {
    case Correct::both: return "both";
    case Correct::trt: return "trt";
    case Correct::out: return "out";
    case Correct::none: return "none";
  }
  return "both";
}

namespace {

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Alternating sign pattern of the outcome means: row i holds s_k(x_i) for
// k = 1..4.
Eigen::RowVector4d sign_pattern(const Eigen::RowVector4d& x) {
  Eigen::RowVector4d s;
  s[0] = x[1] - x[2] + x[3];
  s[1] = x[0] + x[2] - x[3];
  s[2] = -x[0] + x[1] + x[3];
  s[3] = x[0] - x[1] + x[2];
  return s;
}

}  // namespace

Dataset generate_dataset(std::int64_t n, double lambda, mathkit::Rng& rng) {
  Dataset data;
  data.covariates.resize(n, 4);
  data.treatment.resize(n);
  data.outcomes.resize(n, 4);
  data.covariate_names = {"x1", "x2", "x3", "x4"};
  data.outcome_names = {"y1", "y2", "y3", "y4"};

  for (std::int64_t i = 0; i < n; ++i) {
    for (int j = 0; j < 4; ++j) data.covariates(i, j) = rng.normal();
  }
  for (std::int64_t i = 0; i < n; ++i) {
    const auto x = data.covariates.row(i);
    const double logit = (2.0 * x[0] - 4.0 * x[1] + 2.0 * x[2] - x[3]) / 4.0;
    data.treatment[i] = rng.bernoulli(expit(logit)) ? 1.0 : 0.0;
  }
  for (std::int64_t i = 0; i < n; ++i) {
    const Eigen::RowVector4d s = sign_pattern(data.covariates.row(i));
    const double a = data.treatment[i];
    for (int k = 0; k < 4; ++k) {
      const double kk = static_cast<double>(k + 1);
      const double mu = kk * s[k] + 2.0 * (kk - lambda) * a;
      data.outcomes(i, k) = mu + kk * rng.normal();
    }
  }
  return data;
}

Eigen::VectorXd true_scaled_effects(double lambda) {
  Eigen::VectorXd psi(4);
  for (int k = 0; k < 4; ++k) psi[k] = 1.0 - lambda / static_cast<double>(k + 1);
  return psi;
}

Eigen::MatrixXd misspecify_covariates(const Eigen::MatrixXd& x) {
  if (x.cols() != 4) throw DataError("misspecify_covariates: expected 4 columns");
  Eigen::MatrixXd out(x.rows(), 4);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double x1 = x(i, 0), x2 = x(i, 1), x3 = x(i, 2), x4 = x(i, 3);
    out(i, 0) = std::exp(x1 / 2.0);
    out(i, 1) = 10.0 + x2 / (1.0 + std::exp(x1));
    const double c = 0.6 + x1 * x3 / 25.0;
    out(i, 2) = c * c * c;
    const double d = x2 + x4 + 20.0;
    out(i, 3) = d * d;
  }
  return out;
}

FeatureSet build_features(const Eigen::MatrixXd& x_true, const Eigen::MatrixXd& x_miss,
                          Correct correct) {
  FeatureSet f;
  f.propensity = (correct == Correct::both || correct == Correct::trt) ? x_true : x_miss;
  f.outcome_mean = (correct == Correct::both || correct == Correct::out) ? x_true : x_miss;
  f.quadratic.resize(f.outcome_mean.rows(), 10);
  for (int j = 0; j < 4; ++j) {
    f.quadratic.col(j) = f.outcome_mean.col(j).cwiseProduct(f.outcome_mean.col(j));
  }
  int col = 4;
  for (int j = 0; j < 4; ++j) {
    for (int l = j + 1; l < 4; ++l) {
      f.quadratic.col(col++) = f.outcome_mean.col(j).cwiseProduct(f.outcome_mean.col(l));
    }
  }
  return f;
}

AnalysisProblem assemble_analysis(const Dataset& raw, const FeatureSet& features) {
  AnalysisProblem problem;
  Dataset& data = problem.data;
  const std::int64_t n = raw.n();
  data.treatment = raw.treatment;
  data.outcomes = raw.outcomes;
  data.outcome_names = raw.outcome_names;

  data.covariates.resize(n, 18);
  data.covariates.leftCols<4>() = features.propensity;
  data.covariates.middleCols<4>(4) = features.outcome_mean;
  data.covariates.rightCols<10>() = features.quadratic;
  std::vector<std::string> prop_names, mean_names, quad_names;
  for (int j = 1; j <= 4; ++j) {
    prop_names.push_back("p" + std::to_string(j));
    mean_names.push_back("m" + std::to_string(j));
  }
  for (int j = 1; j <= 10; ++j) quad_names.push_back("q" + std::to_string(j));
  data.covariate_names = prop_names;
  data.covariate_names.insert(data.covariate_names.end(), mean_names.begin(), mean_names.end());
  data.covariate_names.insert(data.covariate_names.end(), quad_names.begin(), quad_names.end());

  std::vector<std::string> second_names = mean_names;
  second_names.insert(second_names.end(), quad_names.begin(), quad_names.end());

  problem.specs.push_back({Target::propensity, -1, prop_names, {}});
  for (int k = 0; k < raw.num_outcomes(); ++k) {
    problem.specs.push_back({Target::outcome_mean, k, mean_names, {}});
    problem.specs.push_back({Target::second_moment, k, second_names, {}});
  }
  return problem;
}

SimSummary run_replications(const SimScenario& scenario, Exec exec) {
  const int reps = scenario.n_sim;
  if (reps < 1) throw DataError("run_replications: n_sim must be >= 1");
  constexpr int kOutcomes = 4;

  Eigen::MatrixXd psi(reps, kOutcomes);
  Eigen::MatrixXd se(reps, kOutcomes);
  Eigen::VectorXd pval(reps);
  std::vector<char> ok(static_cast<std::size_t>(reps), 0);

  parallel_for(
      reps,
      [&](std::int64_t r) {
        try {
          mathkit::Rng rng(scenario.master_seed, static_cast<std::uint64_t>(r));
          const Dataset raw = generate_dataset(scenario.n, scenario.lambda, rng);
          const Eigen::MatrixXd x_miss = misspecify_covariates(raw.covariates);
          const FeatureSet features =
              build_features(raw.covariates, x_miss, scenario.correct);
          AnalysisProblem problem = assemble_analysis(raw, features);
          validate(problem.data);

          NuisanceSetup setup;
          setup.specs = std::move(problem.specs);
          setup.clip = scenario.clip;
          const NuisanceFits fits = fit_nuisances(problem.data, setup);
          const ScaledEffects effects =
              estimate_scaled_effects(problem.data, fits, scenario.alpha, Exec::serial);
          const TestResult test = homogeneity_test(effects.table.estimates,
                                                   effects.table.covariance, scenario.n);
          psi.row(r) = effects.table.estimates.transpose();
          se.row(r) = effects.table.std_errors.transpose();
          pval[r] = test.p_value;
          ok[static_cast<std::size_t>(r)] = 1;
        } catch (const std::exception&) {
          ok[static_cast<std::size_t>(r)] = 0;  // recorded and excluded below
        }
      },
      exec);

  SimSummary summary;
  summary.scenario = scenario;
  summary.true_psi = true_scaled_effects(scenario.lambda);
  std::vector<int> kept;
  for (int r = 0; r < reps; ++r) {
    if (ok[static_cast<std::size_t>(r)]) kept.push_back(r);
  }
  summary.completed = static_cast<int>(kept.size());
  summary.excluded = reps - summary.completed;
  if (summary.excluded > 0 &&
      static_cast<double>(summary.excluded) > 0.01 * static_cast<double>(reps)) {
    throw NumericError("run_replications: " + std::to_string(summary.excluded) + " of " +
                       std::to_string(reps) + " replicates failed");
  }
  if (kept.empty()) throw NumericError("run_replications: no replicate succeeded");

  const auto m = static_cast<double>(kept.size());
  summary.bias.resize(kOutcomes);
  summary.empirical_sd.resize(kOutcomes);
  summary.median_se.resize(kOutcomes);
  summary.rmse_sqrt_n.resize(kOutcomes);
  summary.coverage.resize(kOutcomes);
  for (int k = 0; k < kOutcomes; ++k) {
    const double truth = summary.true_psi[k];
    double mean = 0.0;
    for (int r : kept) mean += psi(r, k);
    mean /= m;
    double ss = 0.0, mse = 0.0, covered = 0.0;
    std::vector<double> ses;
    ses.reserve(kept.size());
    for (int r : kept) {
      const double est = psi(r, k);
      ss += (est - mean) * (est - mean);
      mse += (est - truth) * (est - truth);
      const double half = 1.96 * se(r, k);
      if (est - half < truth && truth < est + half) covered += 1.0;
      ses.push_back(se(r, k));
    }
    summary.bias[k] = mean - truth;
    summary.empirical_sd[k] = kept.size() > 1 ? std::sqrt(ss / (m - 1.0)) : 0.0;
    summary.rmse_sqrt_n[k] = std::sqrt(static_cast<double>(scenario.n) * mse / m);
    summary.coverage[k] = covered / m;
    std::sort(ses.begin(), ses.end());
    const std::size_t half_idx = ses.size() / 2;
    summary.median_se[k] = ses.size() % 2 == 1
                               ? ses[half_idx]
                               : 0.5 * (ses[half_idx - 1] + ses[half_idx]);
  }
  double rejected = 0.0;
  for (int r : kept) {
    if (pval[r] <= scenario.alpha) rejected += 1.0;
  }
  summary.rejection_rate = rejected / m;
  return summary;
}

// ---------------------------------------------------------------------------

double DiscreteDgp::tilt(int outcome, int x, int arm) const {
  if (outcome == 0) return 0.4 * x + 0.5 * arm;
  return -0.3 * x + 0.2 * arm + 0.3 * x * arm;
}

std::array<double, 3> DiscreteDgp::pmf(int outcome, int x, int arm) const {
  std::array<double, 3> p{};
  double total = 0.0;
  for (int y = 0; y < 3; ++y) {
    p[static_cast<std::size_t>(y)] =
        base_weights[static_cast<std::size_t>(y)] * std::exp(tilt(outcome, x, arm) * y);
    total += p[static_cast<std::size_t>(y)];
  }
  for (auto& v : p) v /= total;
  return p;
}

double DiscreteDgp::mean(int outcome, int x, int arm) const {
  const auto p = pmf(outcome, x, arm);
  return p[1] + 2.0 * p[2];
}

double DiscreteDgp::second_moment(int outcome, int x, int arm) const {
  const auto p = pmf(outcome, x, arm);
  return p[1] + 4.0 * p[2];
}

Dataset DiscreteDgp::sample(std::int64_t n, mathkit::Rng& rng) const {
  Dataset data;
  data.covariates.resize(n, 1);
  data.treatment.resize(n);
  data.outcomes.resize(n, kOutcomes);
  data.covariate_names = {"x1"};
  data.outcome_names = {"y1", "y2"};
  for (std::int64_t i = 0; i < n; ++i) {
    const int x = rng.bernoulli(p_x) ? 1 : 0;
    const int a = rng.bernoulli(propensity_by_x[static_cast<std::size_t>(x)]) ? 1 : 0;
    data.covariates(i, 0) = x;
    data.treatment[i] = a;
    for (int k = 0; k < kOutcomes; ++k) {
      const auto p = pmf(k, x, a);
      const double u = rng.uniform();
      data.outcomes(i, k) = u < p[0] ? 0.0 : (u < p[0] + p[1] ? 1.0 : 2.0);
    }
  }
  return data;
}

OracleNuisances DiscreteDgp::oracle() const {
  const DiscreteDgp dgp = *this;
  OracleNuisances oracle;
  oracle.propensity = [dgp](const OracleNuisances::Row& row) {
    return dgp.propensity_by_x[row[0] != 0.0 ? 1 : 0];
  };
  oracle.outcome_mean = [dgp](const OracleNuisances::Row& row, int k, int arm) {
    return dgp.mean(k, row[0] != 0.0 ? 1 : 0, arm);
  };
  oracle.second_moment = [dgp](const OracleNuisances::Row& row, int k) {
    return dgp.second_moment(k, row[0] != 0.0 ? 1 : 0, 0);
  };
  oracle.cdf = [dgp](const OracleNuisances::Row& row, int k, int arm, double y) {
    const auto p = dgp.pmf(k, row[0] != 0.0 ? 1 : 0, arm);
    if (y < 0.0) return 0.0;
    if (y < 1.0) return p[0];
    if (y < 2.0) return p[0] + p[1];
    return 1.0;
  };
  return oracle;
}

}  // namespace mote::sim
