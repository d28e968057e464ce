#include "mote/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace mote {

namespace {

int find_column(const std::vector<std::string>& names, const std::string& name,
                const char* block) {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) {
    throw DataError(std::string("unknown ") + block + " column '" + name + "'");
  }
  return static_cast<int>(it - names.begin());
}

}  // namespace

int Dataset::covariate_index(const std::string& name) const {
  return find_column(covariate_names, name, "covariate");
}

int Dataset::outcome_index(const std::string& name) const {
  return find_column(outcome_names, name, "outcome");
}

Eigen::MatrixXd Dataset::covariate_block(const std::vector<std::string>& names) const {
  Eigen::MatrixXd block(n(), static_cast<Eigen::Index>(names.size()));
  for (std::size_t j = 0; j < names.size(); ++j) {
    block.col(static_cast<Eigen::Index>(j)) = covariates.col(covariate_index(names[j]));
  }
  return block;
}

namespace {

void check_unique(const std::vector<std::string>& names, const char* block,
                  std::vector<ValidationIssue>& issues) {
  std::set<std::string> seen;
  for (const auto& name : names) {
    if (!seen.insert(name).second) {
      issues.push_back({"unique column names",
                        std::string("duplicate ") + block + " column '" + name + "'"});
    }
  }
}

void check_finite(const Eigen::MatrixXd& m, const std::vector<std::string>& names,
                  const char* block, std::vector<ValidationIssue>& issues) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      if (!std::isfinite(m(i, j))) {
        std::ostringstream msg;
        msg << "non-finite " << block << " value at row " << (i + 1) << ", column '"
            << names[static_cast<std::size_t>(j)] << "'";
        issues.push_back({"finite entries", msg.str()});
      }
    }
  }
}

}  // namespace

std::vector<ValidationIssue> check_dataset(const Dataset& data) {
  std::vector<ValidationIssue> issues;
  const std::int64_t n = data.n();

  if (n == 0) {
    issues.push_back({"non-empty data", "dataset has no rows"});
    return issues;
  }
  if (data.treatment.size() != n || data.outcomes.rows() != n) {
    issues.push_back({"aligned blocks", "covariate, treatment and outcome row counts differ"});
    return issues;
  }
  if (data.covariate_names.size() != static_cast<std::size_t>(data.covariates.cols()) ||
      data.outcome_names.size() != static_cast<std::size_t>(data.outcomes.cols())) {
    issues.push_back({"labelled columns", "column name count does not match matrix width"});
    return issues;
  }

  check_unique(data.covariate_names, "covariate", issues);
  check_unique(data.outcome_names, "outcome", issues);

  std::int64_t treated = 0;
  std::int64_t control = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double a = data.treatment[i];
    if (a == 1.0) {
      ++treated;
    } else if (a == 0.0) {
      ++control;
    } else {
      std::ostringstream msg;
      msg << "non-binary treatment at row " << (i + 1);
      issues.push_back({"binary treatment", msg.str()});
    }
  }
  if (treated == 0 && control > 0) {
    issues.push_back({"non-empty arms", "empty treated arm"});
  }
  if (control == 0 && treated > 0) {
    issues.push_back({"non-empty arms", "empty control arm"});
  }

  check_finite(data.covariates, data.covariate_names, "covariate", issues);
  check_finite(data.outcomes, data.outcome_names, "outcome", issues);
  return issues;
}

const Dataset& validate(const Dataset& data) {
  auto issues = check_dataset(data);
  if (issues.empty()) return data;
  std::ostringstream msg;
  msg << "dataset failed validation (" << issues.size() << " issue"
      << (issues.size() == 1 ? "" : "s") << "):";
  for (const auto& issue : issues) msg << "\n  - " << issue.detail;
  throw ValidationError(msg.str(), std::move(issues));
}

const CdfSurface& NuisanceFits::cdf_surface(int outcome, int arm) const {
  const auto it = cdf_surfaces.find({outcome, arm});
  if (it == cdf_surfaces.end()) {
    throw DataError("no fitted CDF surface for outcome " + std::to_string(outcome + 1) +
                    ", arm " + std::to_string(arm));
  }
  return it->second;
}

bool NuisanceFits::has_cdf_surface(int outcome, int arm) const {
  return cdf_surfaces.count({outcome, arm}) > 0;
}

void MomentEstimates::require_nondegenerate(
    const std::vector<std::string>& outcome_names) const {
  for (int k = 0; k < num_outcomes(); ++k) {
    if (!(control_variance(k) > 1e-12)) {
      const std::string label = k < static_cast<int>(outcome_names.size())
                                    ? outcome_names[static_cast<std::size_t>(k)]
                                    : std::to_string(k + 1);
      throw NumericError("degenerate control variance for outcome '" + label + "'");
    }
  }
}

}  // namespace mote
