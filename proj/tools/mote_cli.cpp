// mote -- doubly robust scaled treatment effects across multiple outcomes.
//
// Subcommands:
//   estimate   scaled-mean / quantile / effect-mod / weighted-summary estimands
//   test       homogeneity test plus corrected pairwise comparisons
//   simulate   Monte-Carlo replication study over the built-in design
//
// Human-readable tables go to stdout; the full-precision structured document
// goes to --output as JSON. Exit codes: 0 ok, 1 data/config error,
// 2 numerical failure.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mote/csv.hpp"
#include "mote/estimate.hpp"
#include "mote/model.hpp"
#include "mote/nuisance.hpp"
#include "mote/sim.hpp"
#include "mote/testing.hpp"

using nlohmann::json;

namespace {

struct AnalysisConfig {
  std::string input;
  std::string treatment = "a";
  std::vector<std::string> outcomes;
  std::vector<std::string> features;  // empty = all covariates
  bool quadratic_eta = false;
  std::string stratum;
  std::string weights_path;
  double alpha = 0.05;
  double clip = 0.01;
  int folds = 0;  // 0 = no cross-fitting
  int bootstrap = 0;  // 0 = closed form / default B
  std::uint64_t seed = 0;
  std::string estimand = "scaled-mean";
  std::string correction = "bonferroni";
  bool marginal_sd = false;
  int grid = 101;
  std::string output;
};

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void print_table(const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t j = 0; j < header.size(); ++j) width[j] = header[j].size();
  for (const auto& row : rows) {
    for (std::size_t j = 0; j < row.size(); ++j) width[j] = std::max(width[j], row[j].size());
  }
  const auto print_row = [&](const std::vector<std::string>& row) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      std::cout << (j ? "  " : "") << row[j]
                << std::string(width[j] - row[j].size(), ' ');
    }
    std::cout << '\n';
  };
  print_row(header);
  for (const auto& row : rows) print_row(row);
}

json config_echo(const AnalysisConfig& cfg) {
  json j;
  j["input"] = cfg.input;
  j["treatment"] = cfg.treatment;
  j["outcomes"] = cfg.outcomes;
  j["features"] = cfg.features;
  j["quadratic_eta"] = cfg.quadratic_eta;
  j["stratum"] = cfg.stratum.empty() ? json(nullptr) : json(cfg.stratum);
  j["weights"] = cfg.weights_path.empty() ? json(nullptr) : json(cfg.weights_path);
  j["alpha"] = cfg.alpha;
  j["clip"] = cfg.clip;
  j["folds"] = cfg.folds > 0 ? json(cfg.folds) : json(nullptr);
  j["bootstrap"] = cfg.bootstrap > 0 ? json(cfg.bootstrap) : json(nullptr);
  j["seed"] = cfg.seed;
  j["estimand"] = cfg.estimand;
  j["correction"] = cfg.correction;
  j["marginal_sd"] = cfg.marginal_sd;
  j["grid"] = cfg.grid;
  return j;
}

json empty_document(const std::string& command, const json& config) {
  json doc;
  doc["command"] = command;
  doc["config"] = config;
  doc["estimates"] = nullptr;
  doc["covariance"] = nullptr;
  doc["tests"] = nullptr;
  doc["simulation"] = nullptr;
  doc["diagnostics"] = json{{"warnings", json::array()}};
  return doc;
}

void write_document(const std::string& path, const json& doc) {
  if (path.empty()) return;
  std::ofstream out(path);
  if (!out) throw mote::DataError("cannot open output file '" + path + "'");
  out << doc.dump(2) << '\n';
}

json covariance_json(const mote::mathkit::SymmetricMatrix& sigma,
                     const std::vector<std::string>& labels, const std::string& source) {
  json rows = json::array();
  for (int i = 0; i < sigma.dim(); ++i) {
    json row = json::array();
    for (int j = 0; j < sigma.dim(); ++j) row.push_back(sigma(i, j));
    rows.push_back(row);
  }
  return json{{"source", source}, {"labels", labels}, {"matrix", rows}};
}

// Appends squared and pairwise-product columns of the configured features;
// returns the expanded feature name list for the second-moment models.
std::vector<std::string> append_quadratic(mote::Dataset& data,
                                          const std::vector<std::string>& features) {
  std::vector<std::string> expanded = features;
  const auto base = data.covariate_block(features);
  const Eigen::Index n = data.n();
  const auto m = static_cast<Eigen::Index>(features.size());
  const Eigen::Index extra = m + m * (m - 1) / 2;
  Eigen::MatrixXd grown(n, data.covariates.cols() + extra);
  grown.leftCols(data.covariates.cols()) = data.covariates;
  Eigen::Index col = data.covariates.cols();
  for (Eigen::Index j = 0; j < m; ++j) {
    grown.col(col++) = base.col(j).cwiseProduct(base.col(j));
    const std::string name = features[static_cast<std::size_t>(j)] + "_sq";
    data.covariate_names.push_back(name);
    expanded.push_back(name);
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index l = j + 1; l < m; ++l) {
      grown.col(col++) = base.col(j).cwiseProduct(base.col(l));
      const std::string name = features[static_cast<std::size_t>(j)] + "_x_" +
                               features[static_cast<std::size_t>(l)];
      data.covariate_names.push_back(name);
      expanded.push_back(name);
    }
  }
  data.covariates = std::move(grown);
  return expanded;
}

struct LoadedProblem {
  mote::Dataset data;
  mote::NuisanceSetup setup;
};

LoadedProblem load_problem(const AnalysisConfig& cfg) {
  if (cfg.outcomes.empty()) throw mote::DataError("no outcome columns configured (--outcomes)");
  const mote::Table table = mote::read_csv(cfg.input);
  LoadedProblem problem;
  problem.data = mote::dataset_from_table(table, cfg.treatment, cfg.outcomes);
  mote::validate(problem.data);

  std::vector<std::string> features = cfg.features;
  if (features.empty()) features = problem.data.covariate_names;
  if (features.size() == 1 && features[0] == "none") features.clear();  // intercept-only
  for (const auto& name : features) {
    problem.data.covariate_index(name);  // existence check
  }
  std::vector<std::string> second_features = features;
  if (cfg.quadratic_eta) second_features = append_quadratic(problem.data, features);

  problem.setup.clip = cfg.clip;
  if (cfg.folds > 0) problem.setup.cross_fit_folds = cfg.folds;
  problem.setup.specs.push_back({mote::Target::propensity, -1, features, {}});
  for (int k = 0; k < problem.data.num_outcomes(); ++k) {
    problem.setup.specs.push_back({mote::Target::outcome_mean, k, features, {}});
    problem.setup.specs.push_back({mote::Target::second_moment, k, second_features, {}});
    problem.setup.specs.push_back({mote::Target::cdf, k, features, {}});
  }
  return problem;
}

mote::WeightFunction load_weights(const std::string& path, const mote::Dataset& data) {
  std::ifstream in(path);
  if (!in) throw mote::DataError("cannot open weights file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw mote::DataError("weights file is empty");
  // header line: outcome,stratum,weight
  mote::WeightFunction weights;
  std::int64_t row = 1;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    std::istringstream cells(line);
    std::string outcome, stratum, weight;
    if (!std::getline(cells, outcome, ',') || !std::getline(cells, stratum, ',') ||
        !std::getline(cells, weight)) {
      throw mote::DataError("weights file line " + std::to_string(row) +
                            " is not outcome,stratum,weight");
    }
    try {
      weights.set(data.outcome_index(outcome), std::stod(stratum), std::stod(weight));
    } catch (const mote::DataError&) {
      throw;
    } catch (const std::exception&) {
      throw mote::DataError("cannot parse weights file line " + std::to_string(row));
    }
  }
  return weights;
}

int cmd_estimate(const AnalysisConfig& cfg) {
  LoadedProblem problem = load_problem(cfg);
  json doc = empty_document("estimate", config_echo(cfg));
  const mote::Dataset& data = problem.data;

  if (cfg.estimand == "scaled-mean") {
    const mote::NuisanceFits fits = mote::fit_nuisances(data, problem.setup);
    const auto result = mote::estimate_scaled_effects(data, fits, cfg.alpha);
    std::string source = "closed-form";
    mote::mathkit::SymmetricMatrix sigma = result.table.covariance;
    if (cfg.bootstrap > 0) {
      sigma = mote::bootstrap_covariance(data, problem.setup, {}, cfg.bootstrap, cfg.seed);
      source = "bootstrap";
    }
    const auto table = result.table;
    json rows = json::array();
    std::vector<std::vector<std::string>> printed;
    const double z = mote::mathkit::normal_quantile(1.0 - cfg.alpha / 2.0);
    for (int k = 0; k < data.num_outcomes(); ++k) {
      const double se = std::sqrt(sigma(k, k) / static_cast<double>(data.n()));
      const double lo = table.estimates[k] - z * se;
      const double hi = table.estimates[k] + z * se;
      rows.push_back(json{{"outcome", data.outcome_names[k]},
                          {"estimate", table.estimates[k]},
                          {"std_error", se},
                          {"ci_lower", lo},
                          {"ci_upper", hi}});
      printed.push_back({data.outcome_names[k], fmt6(table.estimates[k]), fmt6(se),
                         fmt6(lo), fmt6(hi)});
    }
    doc["estimates"] = json{{"estimand", "scaled-mean"}, {"alpha", cfg.alpha}, {"rows", rows}};
    doc["covariance"] = covariance_json(sigma, data.outcome_names, source);
    for (const auto& w : fits.warnings) doc["diagnostics"]["warnings"].push_back(w);
    std::cout << "Scaled mean effects (alpha = " << fmt6(cfg.alpha) << ", covariance: "
              << source << ")\n";
    print_table({"outcome", "estimate", "std.error", "ci.lower", "ci.upper"}, printed);
  } else if (cfg.estimand == "quantile") {
    json rows = json::array();
    std::vector<std::vector<std::string>> printed;
    for (int k = 0; k < data.num_outcomes(); ++k) {
      mote::QuantileOptions options;
      options.alpha = cfg.alpha;
      options.seed = cfg.seed;
      options.grid_size = cfg.grid;
      if (cfg.bootstrap > 0) options.bootstrap_reps = cfg.bootstrap;
      const auto effect = mote::estimate_quantile_effect(data, problem.setup, k, options);
      rows.push_back(json{{"outcome", data.outcome_names[k]},
                          {"estimate", effect.estimate},
                          {"std_error", effect.std_error},
                          {"ci_lower", effect.ci_lower},
                          {"ci_upper", effect.ci_upper},
                          {"excluded_replicates", effect.excluded_replicates}});
      printed.push_back({data.outcome_names[k], fmt6(effect.estimate),
                         fmt6(effect.std_error), fmt6(effect.ci_lower),
                         fmt6(effect.ci_upper)});
    }
    doc["estimates"] = json{{"estimand", "quantile"}, {"alpha", cfg.alpha}, {"rows", rows}};
    std::cout << "Scaled quantile effects (median / control IQR, bootstrap CIs)\n";
    print_table({"outcome", "estimate", "std.error", "ci.lower", "ci.upper"}, printed);
  } else if (cfg.estimand == "effect-mod") {
    if (cfg.stratum.empty()) throw mote::DataError("effect-mod needs --stratum");
    const mote::NuisanceFits fits = mote::fit_nuisances(data, problem.setup);
    const auto mod = mote::estimate_effect_modification(data, fits, cfg.stratum, cfg.alpha,
                                                        cfg.marginal_sd);
    json rows = json::array();
    std::vector<std::vector<std::string>> printed;
    for (std::size_t v = 0; v < mod.stratum_values.size(); ++v) {
      const auto& table = mod.per_stratum[v];
      for (int k = 0; k < data.num_outcomes(); ++k) {
        rows.push_back(json{{"outcome", data.outcome_names[k]},
                            {"stratum", mod.stratum_values[v]},
                            {"share", mod.stratum_share[static_cast<int>(v)]},
                            {"estimate", table.estimates[k]},
                            {"std_error", table.std_errors[k]},
                            {"ci_lower", table.ci_lower[k]},
                            {"ci_upper", table.ci_upper[k]}});
        printed.push_back({data.outcome_names[k], fmt6(mod.stratum_values[v]),
                           fmt6(table.estimates[k]), fmt6(table.std_errors[k]),
                           fmt6(table.ci_lower[k]), fmt6(table.ci_upper[k])});
      }
    }
    doc["estimates"] = json{{"estimand", "effect-mod"},
                            {"alpha", cfg.alpha},
                            {"stratum", cfg.stratum},
                            {"marginal_sd", cfg.marginal_sd},
                            {"rows", rows}};
    std::cout << "Stratum-conditional scaled effects (stratum: " << cfg.stratum << ")\n";
    print_table({"outcome", "stratum", "estimate", "std.error", "ci.lower", "ci.upper"},
                printed);
  } else if (cfg.estimand == "weighted-summary") {
    if (cfg.stratum.empty()) throw mote::DataError("weighted-summary needs --stratum");
    if (cfg.weights_path.empty()) throw mote::DataError("weighted-summary needs --weights");
    const mote::NuisanceFits fits = mote::fit_nuisances(data, problem.setup);
    const auto weights = load_weights(cfg.weights_path, data);
    const auto summary =
        mote::estimate_weighted_summary(data, fits, cfg.stratum, weights, cfg.alpha);
    doc["estimates"] = json{{"estimand", "weighted-summary"},
                            {"alpha", cfg.alpha},
                            {"rows", json::array({json{{"outcome", "summary"},
                                                       {"estimate", summary.estimate},
                                                       {"std_error", summary.std_error},
                                                       {"ci_lower", summary.ci_lower},
                                                       {"ci_upper", summary.ci_upper}}})}};
    std::cout << "Weighted summary effect\n";
    print_table({"estimate", "std.error", "ci.lower", "ci.upper"},
                {{fmt6(summary.estimate), fmt6(summary.std_error), fmt6(summary.ci_lower),
                  fmt6(summary.ci_upper)}});
  } else {
    throw mote::DataError("unknown estimand '" + cfg.estimand + "'");
  }

  write_document(cfg.output, doc);
  return 0;
}

int cmd_test(const AnalysisConfig& cfg) {
  LoadedProblem problem = load_problem(cfg);
  const mote::Dataset& data = problem.data;
  if (data.num_outcomes() < 2) throw mote::DataError("test needs at least 2 outcomes");
  json doc = empty_document("test", config_echo(cfg));

  const mote::NuisanceFits fits = mote::fit_nuisances(data, problem.setup);
  const auto result = mote::estimate_scaled_effects(data, fits, cfg.alpha);
  mote::mathkit::SymmetricMatrix sigma = result.table.covariance;
  auto source = mote::CovarianceSource::closed_form;
  if (cfg.bootstrap > 0) {
    sigma = mote::bootstrap_covariance(data, problem.setup, {}, cfg.bootstrap, cfg.seed);
    source = mote::CovarianceSource::bootstrap;
  }
  const std::string source_name =
      source == mote::CovarianceSource::closed_form ? "closed-form" : "bootstrap";

  const auto homo = mote::homogeneity_test(result.table.estimates, sigma, data.n(), source);
  const auto correction = cfg.correction == "bh" ? mote::Correction::benjamini_hochberg
                                                 : mote::Correction::bonferroni;
  if (cfg.correction != "bh" && cfg.correction != "bonferroni") {
    throw mote::DataError("unknown correction '" + cfg.correction + "'");
  }
  const auto pairs =
      mote::pairwise_tests(result.table.estimates, sigma, data.n(), correction, cfg.alpha);

  json pair_rows = json::array();
  std::vector<std::vector<std::string>> printed;
  for (const auto& pair : pairs) {
    pair_rows.push_back(json{{"first", data.outcome_names[pair.first]},
                             {"second", data.outcome_names[pair.second]},
                             {"statistic", pair.statistic},
                             {"p_raw", pair.p_raw},
                             {"p_adjusted", pair.p_adjusted},
                             {"reject", pair.reject}});
    printed.push_back({data.outcome_names[pair.first], data.outcome_names[pair.second],
                       fmt6(pair.statistic), fmt6(pair.p_raw), fmt6(pair.p_adjusted),
                       pair.reject ? "yes" : "no"});
  }
  doc["tests"] = json{{"homogeneity",
                       json{{"statistic", homo.statistic},
                            {"df", homo.df},
                            {"p_value", homo.p_value},
                            {"covariance_source", source_name},
                            {"pseudo_inverse", homo.pseudo_inverse}}},
                      {"pairwise", json{{"correction", cfg.correction},
                                        {"alpha", cfg.alpha},
                                        {"pairs", pair_rows}}}};
  doc["covariance"] = covariance_json(sigma, data.outcome_names, source_name);
  json est_rows = json::array();
  for (int k = 0; k < data.num_outcomes(); ++k) {
    est_rows.push_back(json{{"outcome", data.outcome_names[k]},
                            {"estimate", result.table.estimates[k]}});
  }
  doc["estimates"] = json{{"estimand", "scaled-mean"}, {"rows", est_rows}};

  std::cout << "Homogeneity test: T = " << fmt6(homo.statistic) << ", df = " << homo.df
            << ", p = " << fmt6(homo.p_value) << " (" << source_name
            << (homo.pseudo_inverse ? ", pseudo-inverse" : "") << ")\n";
  std::cout << "Pairwise tests (" << cfg.correction << ")\n";
  print_table({"first", "second", "statistic", "p.raw", "p.adj", "reject"}, printed);

  write_document(cfg.output, doc);
  return 0;
}

struct SimulateConfig {
  std::int64_t n = 1000;
  int nsim = 1000;
  double lambda = 2.0;
  std::string correct = "both";
  std::uint64_t seed = 0;
  double alpha = 0.05;
  double clip = 0.01;
  std::string output;
};

int cmd_simulate(const SimulateConfig& cfg) {
  mote::sim::SimScenario scenario;
  scenario.n = cfg.n;
  scenario.n_sim = cfg.nsim;
  scenario.lambda = cfg.lambda;
  scenario.correct = mote::sim::correct_from_string(cfg.correct);
  scenario.master_seed = cfg.seed;
  scenario.alpha = cfg.alpha;
  scenario.clip = cfg.clip;

  const auto summary = mote::sim::run_replications(scenario);

  json config;
  config["n"] = cfg.n;
  config["nsim"] = cfg.nsim;
  config["lambda"] = cfg.lambda;
  config["correct"] = cfg.correct;
  config["seed"] = cfg.seed;
  config["alpha"] = cfg.alpha;
  config["clip"] = cfg.clip;
  json doc = empty_document("simulate", config);

  json per_outcome = json::array();
  std::vector<std::vector<std::string>> printed;
  for (int k = 0; k < 4; ++k) {
    per_outcome.push_back(json{{"outcome", "y" + std::to_string(k + 1)},
                               {"true_psi", summary.true_psi[k]},
                               {"bias", summary.bias[k]},
                               {"sd", summary.empirical_sd[k]},
                               {"median_se", summary.median_se[k]},
                               {"rmse_sqrt_n", summary.rmse_sqrt_n[k]},
                               {"coverage", summary.coverage[k]}});
    printed.push_back({"y" + std::to_string(k + 1), fmt6(summary.true_psi[k]),
                       fmt6(summary.bias[k]), fmt6(summary.empirical_sd[k]),
                       fmt6(summary.median_se[k]), fmt6(summary.rmse_sqrt_n[k]),
                       fmt6(summary.coverage[k])});
  }
  doc["simulation"] = json{{"per_outcome", per_outcome},
                           {"rejection_rate", summary.rejection_rate},
                           {"excluded", summary.excluded},
                           {"completed", summary.completed}};

  std::cout << "Simulation: n = " << cfg.n << ", replicates = " << cfg.nsim
            << ", lambda = " << fmt6(cfg.lambda) << ", correct = " << cfg.correct << "\n";
  print_table({"outcome", "true", "bias", "sd", "med.se", "rmse.sqrt.n", "coverage"}, printed);
  std::cout << "homogeneity rejection rate: " << fmt6(summary.rejection_rate)
            << "   excluded replicates: " << summary.excluded << "\n";

  write_document(cfg.output, doc);
  return 0;
}

void add_analysis_options(CLI::App* cmd, AnalysisConfig& cfg) {
  cmd->add_option("--input", cfg.input, "input CSV path")->required();
  cmd->add_option("--treatment", cfg.treatment, "treatment column name");
  cmd->add_option("--outcomes", cfg.outcomes, "outcome column names")
      ->required()
      ->delimiter(',');
  cmd->add_option("--features", cfg.features,
                  "feature columns for the nuisance models (default: all covariates; "
                  "'none' for intercept-only)")
      ->delimiter(',');
  cmd->add_flag("--quadratic-eta", cfg.quadratic_eta,
                "expand second-moment features with squares and pairwise products");
  cmd->add_option("--stratum", cfg.stratum, "stratum column for effect modification");
  cmd->add_option("--weights", cfg.weights_path,
                  "weights CSV (header outcome,stratum,weight)");
  cmd->add_option("--alpha", cfg.alpha, "confidence level complement");
  cmd->add_option("--clip", cfg.clip, "propensity clip bound delta");
  cmd->add_option("--folds", cfg.folds, "cross-fitting folds (>= 2)");
  cmd->add_option("--bootstrap", cfg.bootstrap, "bootstrap replicates");
  cmd->add_option("--seed", cfg.seed, "master seed");
  cmd->add_option("--estimand", cfg.estimand,
                  "scaled-mean | quantile | effect-mod | weighted-summary");
  cmd->add_option("--correction", cfg.correction, "bonferroni | bh");
  cmd->add_flag("--marginal-sd", cfg.marginal_sd,
                "standardize strata by the marginal control SD");
  cmd->add_option("--grid", cfg.grid, "quantile grid size");
  cmd->add_option("--output", cfg.output, "structured JSON output path");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"doubly robust scaled treatment effects with multiple outcomes"};
  app.require_subcommand(1);
  app.set_config("--config");

  AnalysisConfig est_cfg;
  CLI::App* est = app.add_subcommand("estimate", "estimate scaled effects");
  add_analysis_options(est, est_cfg);

  AnalysisConfig test_cfg;
  CLI::App* tst = app.add_subcommand("test", "test effect homogeneity");
  add_analysis_options(tst, test_cfg);

  SimulateConfig sim_cfg;
  CLI::App* sim = app.add_subcommand("simulate", "run the Monte-Carlo study");
  sim->add_option("--n", sim_cfg.n, "sample size per replicate");
  sim->add_option("--nsim", sim_cfg.nsim, "number of replicates");
  sim->add_option("--lambda", sim_cfg.lambda, "effect parameter (2 main, 0 null)");
  sim->add_option("--correct", sim_cfg.correct, "both | trt | out | none");
  sim->add_option("--seed", sim_cfg.seed, "master seed");
  sim->add_option("--alpha", sim_cfg.alpha, "test level");
  sim->add_option("--clip", sim_cfg.clip, "propensity clip bound");
  sim->add_option("--output", sim_cfg.output, "structured JSON output path");

  try {
    app.parse(argc, argv);
    if (est->parsed()) return cmd_estimate(est_cfg);
    if (tst->parsed()) return cmd_test(test_cfg);
    if (sim->parsed()) return cmd_simulate(sim_cfg);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const mote::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mote::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
