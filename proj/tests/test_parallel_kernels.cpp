#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

// The OpenMP kernels must reproduce the serial reference bit for bit:
// element loops write disjoint slots and every reduction uses a fixed block
// structure, so the thread count never changes a result.

#include "mote/estimate.hpp"
#include "mote/influence.hpp"
#include "mote/mathkit.hpp"
#include "mote/nuisance.hpp"
#include "mote/sim.hpp"

using namespace mote;

namespace {

struct Fixture {
  Dataset data;
  NuisanceFits fits;
};

Fixture make_fixture(std::int64_t n) {
  mathkit::Rng rng(2718, 0);
  Fixture f;
  const Dataset raw = sim::generate_dataset(n, 2.0, rng);
  auto problem = sim::assemble_analysis(
      raw, sim::build_features(raw.covariates, sim::misspecify_covariates(raw.covariates),
                               sim::Correct::both));
  f.data = problem.data;
  NuisanceSetup setup;
  setup.specs = problem.specs;
  f.fits = fit_nuisances(f.data, setup);
  return f;
}

}  // namespace

TEST_CASE("block sums are policy independent") {
  mathkit::Rng rng(1, 0);
  std::vector<double> x(100001);
  for (auto& v : x) v = rng.normal() * 1e6;
  CHECK(block_sum(x.data(), static_cast<std::int64_t>(x.size()), Exec::serial) ==
        block_sum(x.data(), static_cast<std::int64_t>(x.size()), Exec::parallel));
}

TEST_CASE("influence kernels are policy independent") {
  const Fixture f = make_fixture(30000);
  const auto serial = compute_components(f.data, f.fits, Exec::serial);
  const auto parallel = compute_components(f.data, f.fits, Exec::parallel);
  CHECK((serial.phi0 - parallel.phi0).cwiseAbs().maxCoeff() == 0.0);
  CHECK((serial.phi1 - parallel.phi1).cwiseAbs().maxCoeff() == 0.0);
  CHECK((serial.phi2 - parallel.phi2).cwiseAbs().maxCoeff() == 0.0);

  const auto ms = estimate_moments(serial, Exec::serial);
  const auto mp = estimate_moments(parallel, Exec::parallel);
  CHECK((ms.beta0 - mp.beta0).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ms.beta2 - mp.beta2).cwiseAbs().maxCoeff() == 0.0);

  Eigen::VectorXd psi(4);
  for (int k = 0; k < 4; ++k) {
    psi[k] = (ms.beta1[k] - ms.beta0[k]) / std::sqrt(ms.control_variance(k));
  }
  const auto es = eif_scaled(serial, ms, psi, Exec::serial);
  const auto ep = eif_scaled(parallel, mp, psi, Exec::parallel);
  CHECK((es.values - ep.values).cwiseAbs().maxCoeff() == 0.0);

  const auto cs = mathkit::empirical_covariance(es.values, Exec::serial);
  const auto cp = mathkit::empirical_covariance(ep.values, Exec::parallel);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j <= i; ++j) CHECK(cs(i, j) == cp(i, j));
  }
}

TEST_CASE("scaled-effects pipeline is policy independent") {
  const Fixture f = make_fixture(20000);
  const auto serial = estimate_scaled_effects(f.data, f.fits, 0.05, Exec::serial);
  const auto parallel = estimate_scaled_effects(f.data, f.fits, 0.05, Exec::parallel);
  CHECK((serial.table.estimates - parallel.table.estimates).cwiseAbs().maxCoeff() == 0.0);
  CHECK((serial.table.std_errors - parallel.table.std_errors).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cdf surface fitting is policy independent") {
  const Fixture f = make_fixture(4000);
  Eigen::VectorXd grid(41);
  for (int g = 0; g < 41; ++g) grid[g] = -10.0 + 20.0 * g / 40.0;
  const ModelSpec spec{Target::cdf, 1, {"m1", "m2", "m3", "m4"}, {}};
  const auto serial = fit_cdf_surface(f.data, 1, grid, 0, spec, Exec::serial);
  const auto parallel = fit_cdf_surface(f.data, 1, grid, 0, spec, Exec::parallel);
  CHECK((serial.values - parallel.values).cwiseAbs().maxCoeff() == 0.0);

  auto fits = f.fits;
  fits.cdf_surfaces[{1, 0}] = serial;
  const auto es = estimate_cdf(f.data, fits, 1, 0, Exec::serial);
  const auto ep = estimate_cdf(f.data, fits, 1, 0, Exec::parallel);
  CHECK((es.values - ep.values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("replication loop is policy independent") {
  sim::SimScenario scenario;
  scenario.n = 250;
  scenario.n_sim = 16;
  scenario.master_seed = 5;
  const auto serial = sim::run_replications(scenario, Exec::serial);
  const auto parallel = sim::run_replications(scenario, Exec::parallel);
  CHECK((serial.bias - parallel.bias).cwiseAbs().maxCoeff() == 0.0);
  CHECK((serial.median_se - parallel.median_se).cwiseAbs().maxCoeff() == 0.0);
  CHECK(serial.rejection_rate == parallel.rejection_rate);
}

TEST_CASE("bootstrap is policy independent") {
  const sim::DiscreteDgp dgp;
  mathkit::Rng rng(6, 0);
  const Dataset data = dgp.sample(400, rng);
  const auto oracle = dgp.oracle();
  NuisanceSetup setup;
  setup.oracle = &oracle;
  const auto serial = bootstrap_covariance(data, setup, {}, 120, 3, Exec::serial);
  const auto parallel = bootstrap_covariance(data, setup, {}, 120, 3, Exec::parallel);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j <= i; ++j) CHECK(serial(i, j) == parallel(i, j));
  }
}
