#include "mote/csv.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "mote/errors.hpp"

namespace mote {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  for (auto& cell : cells) {
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\r' || cell.back() == '\t')) {
      cell.pop_back();
    }
    std::size_t lead = 0;
    while (lead < cell.size() && (cell[lead] == ' ' || cell[lead] == '\t')) ++lead;
    cell.erase(0, lead);
  }
  return cells;
}

double parse_cell(const std::string& cell, std::int64_t row, const std::string& column) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  const auto result = std::from_chars(begin, end, value);
  if (result.ec != std::errc() || result.ptr != end || cell.empty()) {
    std::ostringstream msg;
    msg << "cannot parse cell '" << cell << "' at row " << row << ", column '" << column
        << "'";
    throw DataError(msg.str());
  }
  return value;
}

}  // namespace

Table read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open input file '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw DataError("file '" + path + "' is empty");
  Table table;
  table.names = split_line(line);
  if (table.names.empty() || (table.names.size() == 1 && table.names[0].empty())) {
    throw DataError("file '" + path + "' has no header columns");
  }
  const std::size_t width = table.names.size();

  std::vector<double> buffer;
  std::int64_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    const auto cells = split_line(line);
    ++rows;
    if (cells.size() != width) {
      std::ostringstream msg;
      msg << "row " << rows << " has " << cells.size() << " cells, expected " << width;
      throw DataError(msg.str());
    }
    for (std::size_t j = 0; j < width; ++j) {
      buffer.push_back(parse_cell(cells[j], rows, table.names[j]));
    }
  }
  table.values.resize(rows, static_cast<Eigen::Index>(width));
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      table.values(i, static_cast<Eigen::Index>(j)) =
          buffer[static_cast<std::size_t>(i) * width + j];
    }
  }
  return table;
}

void write_csv(const std::string& path, const Table& table) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open output file '" + path + "'");
  for (std::size_t j = 0; j < table.names.size(); ++j) {
    out << (j ? "," : "") << table.names[j];
  }
  out << '\n';
  char buf[64];
  for (Eigen::Index i = 0; i < table.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < table.values.cols(); ++j) {
      const auto res = std::to_chars(buf, buf + sizeof(buf), table.values(i, j));
      if (j) out << ',';
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
  if (!out) throw DataError("write to '" + path + "' failed");
}

Dataset dataset_from_table(const Table& table, const std::string& treatment_column,
                           const std::vector<std::string>& outcome_columns) {
  const auto index_of = [&](const std::string& name) {
    const auto it = std::find(table.names.begin(), table.names.end(), name);
    if (it == table.names.end()) {
      throw DataError("column '" + name + "' not present in input");
    }
    return static_cast<Eigen::Index>(it - table.names.begin());
  };

  const Eigen::Index treat_idx = index_of(treatment_column);
  std::vector<Eigen::Index> outcome_idx;
  for (const auto& name : outcome_columns) {
    if (name == treatment_column) {
      throw DataError("outcome column '" + name + "' collides with the treatment column");
    }
    outcome_idx.push_back(index_of(name));
  }
  if (outcome_idx.empty()) throw DataError("no outcome columns configured");

  Dataset data;
  const Eigen::Index n = table.values.rows();
  data.treatment = table.values.col(treat_idx);
  data.outcomes.resize(n, static_cast<Eigen::Index>(outcome_idx.size()));
  for (std::size_t k = 0; k < outcome_idx.size(); ++k) {
    data.outcomes.col(static_cast<Eigen::Index>(k)) = table.values.col(outcome_idx[k]);
    data.outcome_names.push_back(outcome_columns[k]);
  }
  for (std::size_t j = 0; j < table.names.size(); ++j) {
    const auto idx = static_cast<Eigen::Index>(j);
    if (idx == treat_idx) continue;
    if (std::find(outcome_idx.begin(), outcome_idx.end(), idx) != outcome_idx.end()) continue;
    data.covariate_names.push_back(table.names[j]);
  }
  data.covariates.resize(n, static_cast<Eigen::Index>(data.covariate_names.size()));
  Eigen::Index col = 0;
  for (std::size_t j = 0; j < table.names.size(); ++j) {
    const auto idx = static_cast<Eigen::Index>(j);
    if (idx == treat_idx) continue;
    if (std::find(outcome_idx.begin(), outcome_idx.end(), idx) != outcome_idx.end()) continue;
    data.covariates.col(col++) = table.values.col(idx);
  }
  return data;
}

Table to_table(const Dataset& data, const std::string& treatment_column) {
  Table table;
  const Eigen::Index n = data.covariates.rows();
  const Eigen::Index width = data.covariates.cols() + 1 + data.outcomes.cols();
  table.values.resize(n, width);
  Eigen::Index col = 0;
  for (int j = 0; j < data.num_covariates(); ++j) {
    table.names.push_back(data.covariate_names[static_cast<std::size_t>(j)]);
    table.values.col(col++) = data.covariates.col(j);
  }
  table.names.push_back(treatment_column);
  table.values.col(col++) = data.treatment;
  for (int k = 0; k < data.num_outcomes(); ++k) {
    table.names.push_back(data.outcome_names[static_cast<std::size_t>(k)]);
    table.values.col(col++) = data.outcomes.col(k);
  }
  return table;
}

}  // namespace mote
