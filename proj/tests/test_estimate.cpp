#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mote/estimate.hpp"
#include "mote/sim.hpp"
#include "support/oracles.hpp"

using namespace mote;

namespace {

// RCT with saturated (intercept-only) nuisance models; the AIPW estimator
// then collapses to arm-wise sample moments exactly.
Dataset rct_dataset(std::int64_t n, std::uint64_t seed, double shift = 1.0) {
  mathkit::Rng rng(seed, 0);
  Dataset data;
  data.covariates.resize(n, 1);
  data.treatment.resize(n);
  data.outcomes.resize(n, 1);
  data.covariate_names = {"x1"};
  data.outcome_names = {"y1"};
  for (std::int64_t i = 0; i < n; ++i) {
    data.covariates(i, 0) = rng.normal();
    data.treatment[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    data.outcomes(i, 0) = rng.normal() + shift * data.treatment[i];
  }
  return data;
}

NuisanceSetup saturated_setup(int num_outcomes) {
  NuisanceSetup setup;
  setup.specs.push_back({Target::propensity, -1, {}, {}});
  for (int k = 0; k < num_outcomes; ++k) {
    setup.specs.push_back({Target::outcome_mean, k, {}, {}});
    setup.specs.push_back({Target::second_moment, k, {}, {}});
    setup.specs.push_back({Target::cdf, k, {}, {}});
  }
  return setup;
}

struct ArmMoments {
  double mean0 = 0, mean1 = 0, second0 = 0;
};

ArmMoments arm_moments(const Dataset& data, int k) {
  ArmMoments m;
  double n0 = 0, n1 = 0;
  for (std::int64_t i = 0; i < data.n(); ++i) {
    const double y = data.outcomes(i, k);
    if (data.arm(i) == 1) {
      m.mean1 += y;
      n1 += 1.0;
    } else {
      m.mean0 += y;
      m.second0 += y * y;
      n0 += 1.0;
    }
  }
  m.mean0 /= n0;
  m.mean1 /= n1;
  m.second0 /= n0;
  return m;
}

}  // namespace

TEST_CASE("saturated RCT collapses to arm moments exactly") {
  const Dataset data = rct_dataset(400, 1);
  const auto fits = fit_nuisances(data, saturated_setup(1));
  const auto moments = estimate_moments(data, fits);
  const ArmMoments arms = arm_moments(data, 0);
  CHECK(moments.beta0[0] == doctest::Approx(arms.mean0).epsilon(1e-13));
  CHECK(moments.beta1[0] == doctest::Approx(arms.mean1).epsilon(1e-13));
  CHECK(moments.beta2[0] == doctest::Approx(arms.second0).epsilon(1e-13));

  const auto effects = estimate_scaled_effects(data, fits, 0.05);
  const double sd0 = std::sqrt(arms.second0 - arms.mean0 * arms.mean0);
  CHECK(effects.table.estimates[0] ==
        doctest::Approx((arms.mean1 - arms.mean0) / sd0).epsilon(1e-13));
  CHECK(effects.table.ci_lower[0] <= effects.table.estimates[0]);
  CHECK(effects.table.estimates[0] <= effects.table.ci_upper[0]);
}

TEST_CASE("constant outcome raises a degenerate-variance error naming it") {
  Dataset data = rct_dataset(100, 2);
  data.outcomes.setConstant(3.0);
  const auto fits = fit_nuisances(data, saturated_setup(1));
  CHECK_THROWS_WITH_AS(estimate_scaled_effects(data, fits),
                       "degenerate control variance for outcome 'y1'", NumericError);
}

TEST_CASE("moments on the main design recover the k = 4 truths") {
  mathkit::Rng rng(3, 0);
  const Dataset raw = sim::generate_dataset(100000, 2.0, rng);
  const auto features = sim::build_features(
      raw.covariates, sim::misspecify_covariates(raw.covariates), sim::Correct::both);
  auto problem = sim::assemble_analysis(raw, features);
  NuisanceSetup setup;
  setup.specs = problem.specs;
  const auto fits = fit_nuisances(problem.data, setup);
  const auto components = compute_components(problem.data, fits);
  const auto moments = estimate_moments(components);

  const int k = 3;  // fourth outcome: E(Y1 - Y0) = 4, sd(Y0) = 8
  const auto n = static_cast<double>(raw.n());
  const Eigen::VectorXd diff = components.phi1.col(k) - components.phi0.col(k);
  const double diff_mean = moments.beta1[k] - moments.beta0[k];
  const double diff_sd = std::sqrt((diff.array() - diff_mean).square().sum() / (n - 1.0));
  CHECK(std::fabs(diff_mean - 4.0) < 3.0 * diff_sd / std::sqrt(n));

  // delta-method MC-SE for the estimated control SD
  const double sd_hat = std::sqrt(moments.control_variance(k));
  const Eigen::ArrayXd sd_if =
      (components.phi2.col(k).array() - moments.beta2[k] -
       2.0 * moments.beta0[k] * (components.phi0.col(k).array() - moments.beta0[k])) /
      (2.0 * sd_hat);
  const double sd_se = std::sqrt(sd_if.square().sum() / (n - 1.0)) / std::sqrt(n);
  CHECK(std::fabs(sd_hat - 8.0) < 3.0 * sd_se);
}

TEST_CASE("null-effect RCT keeps psi within 3 SE almost always") {
  int within = 0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    mathkit::Rng rng(900, static_cast<std::uint64_t>(r));
    Dataset data;
    const std::int64_t n = 500;
    data.covariates.resize(n, 1);
    data.treatment.resize(n);
    data.outcomes.resize(n, 1);
    data.covariate_names = {"x1"};
    data.outcome_names = {"y1"};
    for (std::int64_t i = 0; i < n; ++i) {
      data.covariates(i, 0) = rng.normal();
      data.treatment[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
      data.outcomes(i, 0) = 0.5 * data.covariates(i, 0) + rng.normal();  // no effect
    }
    const auto fits = fit_nuisances(data, saturated_setup(1));
    const auto effects = estimate_scaled_effects(data, fits, 0.05, Exec::serial);
    if (std::fabs(effects.table.estimates[0]) < 3.0 * effects.table.std_errors[0]) ++within;
  }
  CHECK(within >= 198);  // >= 99%
}

TEST_CASE("estimate_cdf equals the arm empirical cdf under saturated nuisances") {
  const Dataset data = rct_dataset(300, 4);
  auto fits = fit_nuisances(data, saturated_setup(1));
  Eigen::VectorXd grid(5);
  grid << -1.5, -0.5, 0.0, 0.5, 1.5;
  const ModelSpec spec{Target::cdf, 0, {}, {}};
  fits.cdf_surfaces[{0, 0}] = fit_cdf_surface(data, 0, grid, 0, spec);
  const auto cdf = estimate_cdf(data, fits, 0, 0);

  for (int g = 0; g < 5; ++g) {
    double emp = 0.0, count = 0.0;
    for (std::int64_t i = 0; i < data.n(); ++i) {
      if (data.arm(i) != 0) continue;
      count += 1.0;
      if (data.outcomes(i, 0) <= grid[g]) emp += 1.0;
    }
    CHECK(cdf.values[g] == doctest::Approx(emp / count).epsilon(1e-12));
  }
}

TEST_CASE("estimate_cdf approaches the analytic normal cdf with oracle nuisances") {
  const std::int64_t n = 100000;
  mathkit::Rng rng(5, 0);
  Dataset data;
  data.covariates.resize(n, 1);
  data.treatment.resize(n);
  data.outcomes.resize(n, 1);
  data.covariate_names = {"x1"};
  data.outcome_names = {"y1"};
  for (std::int64_t i = 0; i < n; ++i) {
    data.covariates(i, 0) = rng.normal();
    data.treatment[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    data.outcomes(i, 0) = rng.normal();  // Y ~ N(0,1) in both arms
  }
  OracleNuisances oracle;
  oracle.propensity = [](const OracleNuisances::Row&) { return 0.5; };
  oracle.cdf = [](const OracleNuisances::Row&, int, int, double y) {
    return 0.5 * std::erfc(-y / std::numbers::sqrt2);
  };
  NuisanceSetup setup;
  setup.oracle = &oracle;
  auto fits = fit_nuisances(data, setup);
  Eigen::VectorXd grid(101);
  for (int g = 0; g < 101; ++g) grid[g] = -3.0 + 6.0 * g / 100.0;
  fits.cdf_surfaces[{0, 0}] = oracle_cdf_surface(data, 0, grid, 0, oracle);
  const auto cdf = estimate_cdf(data, fits, 0, 0);
  double max_dev = 0.0;
  for (int g = 0; g < 101; ++g) {
    max_dev = std::max(max_dev, std::fabs(cdf.values[g] - oracles::normal_cdf(grid[g])));
  }
  CHECK(max_dev < 0.01);
}

TEST_CASE("invert_cdf generalized inverse on the grid") {
  CdfEstimate cdf;
  cdf.grid.resize(3);
  cdf.grid << 0, 1, 2;
  cdf.values.resize(3);
  cdf.values << 0.2, 0.6, 1.0;
  CHECK(invert_cdf(cdf, 0.5) == 1.0);
  CHECK(invert_cdf(cdf, 0.6) == 1.0);   // inf attains equality
  CHECK(invert_cdf(cdf, 0.61) == 2.0);  // strict crossing
  // inversion at attained interior values is idempotent on the grid
  for (int g = 0; g < 2; ++g) {
    const double y = invert_cdf(cdf, cdf.values[g]);
    CHECK(y <= cdf.grid[g]);
    CHECK(invert_cdf(cdf, cdf.values[g]) == y);
  }
  cdf.values << 0.1, 0.2, 0.3;
  CHECK_THROWS_AS(invert_cdf(cdf, 0.9), NumericError);
}

TEST_CASE("closed-form quantile variance tracks the bootstrap with oracle nuisances") {
  // N(0,1) control, N(0.5,1) treated, known propensity 0.5
  const std::int64_t n = 2000;
  mathkit::Rng rng(71, 0);
  Dataset data;
  data.covariates.resize(n, 1);
  data.treatment.resize(n);
  data.outcomes.resize(n, 1);
  data.covariate_names = {"x1"};
  data.outcome_names = {"y1"};
  for (std::int64_t i = 0; i < n; ++i) {
    data.covariates(i, 0) = rng.normal();
    data.treatment[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    data.outcomes(i, 0) = 0.5 * data.treatment[i] + rng.normal();
  }
  OracleNuisances oracle;
  oracle.propensity = [](const OracleNuisances::Row&) { return 0.5; };
  oracle.cdf = [](const OracleNuisances::Row&, int, int arm, double y) {
    return 0.5 * std::erfc(-(y - 0.5 * arm) / std::numbers::sqrt2);
  };
  NuisanceSetup setup;
  setup.oracle = &oracle;

  QuantileOptions closed;
  closed.grid_size = 101;
  closed.ci = QuantileCi::closed_form;
  const auto cf = estimate_quantile_effect(data, setup, 0, closed);

  QuantileOptions boot;
  boot.grid_size = 101;
  boot.bootstrap_reps = 500;
  boot.seed = 71;
  const auto bs = estimate_quantile_effect(data, setup, 0, boot);

  CHECK(cf.estimate == bs.estimate);
  const double var_cf = cf.std_error * cf.std_error;
  const double var_bs = bs.std_error * bs.std_error;
  CHECK(std::fabs(var_cf - var_bs) < 0.25 * var_bs);
}

TEST_CASE("quantile effect vanishes when the arms have identical outcomes") {
  // mirror-paired arms: identical empirical distributions, saturated fits
  const std::int64_t half = 150;
  mathkit::Rng rng(6, 0);
  Dataset data;
  data.covariates.resize(2 * half, 1);
  data.treatment.resize(2 * half);
  data.outcomes.resize(2 * half, 1);
  data.covariate_names = {"x1"};
  data.outcome_names = {"y1"};
  for (std::int64_t i = 0; i < half; ++i) {
    const double y = rng.normal();
    data.covariates(2 * i, 0) = rng.normal();
    data.covariates(2 * i + 1, 0) = rng.normal();
    data.treatment[2 * i] = 0.0;
    data.treatment[2 * i + 1] = 1.0;
    data.outcomes(2 * i, 0) = y;
    data.outcomes(2 * i + 1, 0) = y;
  }
  auto setup = saturated_setup(1);
  QuantileOptions options;
  options.bootstrap_reps = 100;
  options.grid_size = 51;
  const auto effect = estimate_quantile_effect(data, setup, 0, options);
  CHECK(effect.estimate == 0.0);
}

TEST_CASE("quantile effect rejects a degenerate control spread") {
  Dataset data = rct_dataset(60, 9);
  data.outcomes.setConstant(2.0);  // zero IQR everywhere
  auto setup = saturated_setup(1);
  QuantileOptions options;
  options.bootstrap_reps = 100;
  options.grid_size = 11;
  CHECK_THROWS_AS(estimate_quantile_effect(data, setup, 0, options), NumericError);

  Eigen::VectorXd unsorted(3);
  unsorted << 1.0, 0.0, 2.0;
  const ModelSpec spec{Target::cdf, 0, {}, {}};
  CHECK_THROWS_AS(fit_cdf_surface(data, 0, unsorted, 0, spec), DataError);
}

TEST_CASE("quantile effect recovers a location shift") {
  const std::int64_t n = 10000;
  mathkit::Rng rng(7, 0);
  Dataset data;
  data.covariates.resize(n, 1);
  data.treatment.resize(n);
  data.outcomes.resize(n, 1);
  data.covariate_names = {"x1"};
  data.outcome_names = {"y1"};
  const double delta = 1.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = rng.normal();
    data.covariates(i, 0) = x;
    const double p = 1.0 / (1.0 + std::exp(-0.4 * x));
    data.treatment[i] = rng.bernoulli(p) ? 1.0 : 0.0;
    data.outcomes(i, 0) = 0.5 * x + delta * data.treatment[i] + rng.normal();
  }
  NuisanceSetup setup;
  setup.specs.push_back({Target::propensity, -1, {"x1"}, {}});
  setup.specs.push_back({Target::cdf, 0, {"x1"}, {}});
  QuantileOptions options;
  options.grid_size = 101;
  options.bootstrap_reps = 100;
  options.seed = 7;
  const auto effect = estimate_quantile_effect(data, setup, 0, options);
  // true value: delta / IQR of N(0, 1 + 0.25) control outcome
  const double control_sd = std::sqrt(1.25);
  const double truth = delta / (2.0 * 0.6745 * control_sd);
  CHECK(std::fabs(effect.estimate - truth) < 0.05);
  CHECK(effect.ci_lower < effect.estimate);
  CHECK(effect.estimate < effect.ci_upper);

  // closed-form route agrees roughly with the bootstrap SE
  QuantileOptions closed = options;
  closed.ci = QuantileCi::closed_form;
  const auto cf = estimate_quantile_effect(data, setup, 0, closed);
  CHECK(cf.estimate == effect.estimate);
  CHECK(cf.std_error > 0.0);
  CHECK(std::fabs(cf.std_error - effect.std_error) < 0.5 * effect.std_error);
}

TEST_CASE("quantile effect is stable on heavy tails where the mean effect is not") {
  const double truth = 0.5;  // shift 1 over Cauchy IQR 2
  std::vector<double> quantile_est, mean_est;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const std::int64_t n = 10000;
    mathkit::Rng rng(800 + seed, 0);
    Dataset data;
    data.covariates.resize(n, 1);
    data.treatment.resize(n);
    data.outcomes.resize(n, 1);
    data.covariate_names = {"x1"};
    data.outcome_names = {"y1"};
    for (std::int64_t i = 0; i < n; ++i) {
      data.covariates(i, 0) = rng.normal();
      data.treatment[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
      const double cauchy = std::tan(std::numbers::pi * (rng.uniform() - 0.5));
      data.outcomes(i, 0) = cauchy + data.treatment[i];
    }
    auto setup = saturated_setup(1);
    QuantileOptions options;
    options.grid_size = 101;
    options.bootstrap_reps = 100;
    options.seed = seed;
    quantile_est.push_back(estimate_quantile_effect(data, setup, 0, options).estimate);
    const auto fits = fit_nuisances(data, setup);
    mean_est.push_back(estimate_scaled_effects(data, fits).table.estimates[0]);
  }
  for (const double est : quantile_est) CHECK(std::fabs(est - truth) < 0.1);
  const auto range = [](const std::vector<double>& v) {
    return *std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end());
  };
  // the mean-based estimate drifts across seeds far more than the quantile one
  CHECK(range(quantile_est) < range(mean_est));
}

TEST_CASE("scaled and quantile effects are affine invariant with saturated fits") {
  Dataset data = rct_dataset(600, 8);
  const auto setup = saturated_setup(1);
  const auto fits = fit_nuisances(data, setup);
  const double base_psi = estimate_scaled_effects(data, fits).table.estimates[0];
  QuantileOptions options;
  options.bootstrap_reps = 100;
  options.grid_size = 101;
  const double base_q = estimate_quantile_effect(data, setup, 0, options).estimate;

  Dataset mapped = data;
  const double c = 3.5, d = -2.0;
  mapped.outcomes = (c * data.outcomes.array() + d).matrix();
  const auto fits2 = fit_nuisances(mapped, setup);
  CHECK(std::fabs(estimate_scaled_effects(mapped, fits2).table.estimates[0] - base_psi) <
        1e-8);
  CHECK(std::fabs(estimate_quantile_effect(mapped, setup, 0, options).estimate - base_q) <
        1e-8);

  Dataset flipped = data;
  flipped.outcomes = (-1.0 * data.outcomes.array()).matrix();
  const auto fits3 = fit_nuisances(flipped, setup);
  CHECK(std::fabs(estimate_scaled_effects(flipped, fits3).table.estimates[0] + base_psi) <
        1e-8);
}
