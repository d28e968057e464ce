// Serial vs OpenMP comparison of the hot kernels: influence-function
// evaluation, covariance reduction, CDF surface fitting and the replication
// loop. Run with --benchmark_filter=... to narrow.

#include <benchmark/benchmark.h>

#include "mote/estimate.hpp"
#include "mote/influence.hpp"
#include "mote/mathkit.hpp"
#include "mote/nuisance.hpp"
#include "mote/sim.hpp"

namespace {

struct Fixture {
  mote::Dataset data;
  mote::NuisanceFits fits;
};

Fixture make_fixture(std::int64_t n) {
  mote::mathkit::Rng rng(42, 0);
  Fixture f;
  f.data = mote::sim::generate_dataset(n, 2.0, rng);
  const auto problem = mote::sim::assemble_analysis(
      f.data, mote::sim::build_features(f.data.covariates,
                                        mote::sim::misspecify_covariates(f.data.covariates),
                                        mote::sim::Correct::both));
  f.data = problem.data;
  mote::NuisanceSetup setup;
  setup.specs = problem.specs;
  f.fits = mote::fit_nuisances(f.data, setup);
  return f;
}

void BM_components(benchmark::State& state, mote::Exec exec) {
  static const Fixture f = make_fixture(500000);
  for (auto _ : state) {
    auto c = mote::compute_components(f.data, f.fits, exec);
    benchmark::DoNotOptimize(c.phi0.data());
  }
}

void BM_covariance(benchmark::State& state, mote::Exec exec) {
  static const Fixture f = make_fixture(500000);
  static const auto eif = [] {
    const auto c = mote::compute_components(f.data, f.fits);
    auto m = mote::estimate_moments(c);
    Eigen::VectorXd psi(4);
    for (int k = 0; k < 4; ++k) {
      psi[k] = (m.beta1[k] - m.beta0[k]) / std::sqrt(m.control_variance(k));
    }
    return mote::eif_scaled(c, m, psi);
  }();
  for (auto _ : state) {
    auto sigma = mote::mathkit::empirical_covariance(eif.values, exec);
    benchmark::DoNotOptimize(&sigma);
  }
}

void BM_cdf_surface(benchmark::State& state, mote::Exec exec) {
  static const Fixture f = make_fixture(20000);
  static const Eigen::VectorXd grid = [] {
    Eigen::VectorXd g(101);
    for (int j = 0; j < 101; ++j) g[j] = -12.0 + 24.0 * j / 100.0;
    return g;
  }();
  mote::ModelSpec spec{mote::Target::cdf, 0, {"m1", "m2", "m3", "m4"}, {}};
  for (auto _ : state) {
    auto surface = mote::fit_cdf_surface(f.data, 0, grid, 0, spec, exec);
    benchmark::DoNotOptimize(surface.values.data());
  }
}

void BM_replications(benchmark::State& state, mote::Exec exec) {
  mote::sim::SimScenario scenario;
  scenario.n = 500;
  scenario.n_sim = 40;
  scenario.master_seed = 7;
  for (auto _ : state) {
    auto summary = mote::sim::run_replications(scenario, exec);
    benchmark::DoNotOptimize(&summary);
  }
}

}  // namespace

BENCHMARK_CAPTURE(BM_components, serial, mote::Exec::serial)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_components, parallel, mote::Exec::parallel)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_covariance, serial, mote::Exec::serial)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_covariance, parallel, mote::Exec::parallel)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_cdf_surface, serial, mote::Exec::serial)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_cdf_surface, parallel, mote::Exec::parallel)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_replications, serial, mote::Exec::serial)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_replications, parallel, mote::Exec::parallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
