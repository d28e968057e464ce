#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mote/model.hpp"

namespace mote {

/// Header-labelled numeric table, the on-disk form of a Dataset.
struct Table {
  std::vector<std::string> names;
  Eigen::MatrixXd values;
};

/// Strict, locale-independent CSV reader: header row required, every body
/// cell must parse as a double. Failures name the 1-based data row and the
/// column.
Table read_csv(const std::string& path);

/// Writes with shortest round-trip formatting, so numeric values survive a
/// write/read cycle bit-exactly.
void write_csv(const std::string& path, const Table& table);

/// Splits a table into a Dataset: named treatment and outcome columns,
/// everything else becomes a covariate.
Dataset dataset_from_table(const Table& table, const std::string& treatment_column,
                           const std::vector<std::string>& outcome_columns);

Table to_table(const Dataset& data, const std::string& treatment_column = "a");

}  // namespace mote
