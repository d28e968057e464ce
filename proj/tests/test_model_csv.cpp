#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mote/csv.hpp"
#include "mote/mathkit.hpp"
#include "mote/model.hpp"

using namespace mote;

namespace {

Dataset small_dataset() {
  Dataset d;
  d.covariates.resize(4, 2);
  d.covariates << 0.1, 1.0, -0.2, 2.0, 0.3, 3.0, -0.4, 4.0;
  d.covariate_names = {"x1", "x2"};
  d.treatment.resize(4);
  d.treatment << 0, 1, 0, 1;
  d.outcomes.resize(4, 1);
  d.outcomes << 1.0, 2.0, 3.0, 4.0;
  d.outcome_names = {"y1"};
  return d;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("validation accepts clean data and is idempotent") {
  const Dataset d = small_dataset();
  CHECK(check_dataset(d).empty());
  const Dataset& once = validate(d);
  const Dataset& twice = validate(once);
  CHECK(&twice == &d);
}

TEST_CASE("validation rejects non-binary treatment with its row") {
  Dataset d = small_dataset();
  d.treatment[1] = 2.0;
  const auto issues = check_dataset(d);
  REQUIRE(issues.size() == 1);
  CHECK(issues[0].detail == "non-binary treatment at row 2");
  CHECK_THROWS_AS(validate(d), ValidationError);
}

TEST_CASE("validation rejects an empty arm") {
  Dataset d = small_dataset();
  d.treatment.setOnes();
  const auto issues = check_dataset(d);
  REQUIRE(issues.size() == 1);
  CHECK(issues[0].detail == "empty control arm");
}

TEST_CASE("validation rejects non-finite values and duplicate names") {
  Dataset d = small_dataset();
  d.covariates(2, 0) = std::numeric_limits<double>::quiet_NaN();
  d.outcome_names = {"x1"};  // fine: uniqueness is within each block
  auto issues = check_dataset(d);
  REQUIRE(issues.size() == 1);
  CHECK(issues[0].detail.find("row 3") != std::string::npos);
  CHECK(issues[0].detail.find("x1") != std::string::npos);

  Dataset dup = small_dataset();
  dup.covariate_names = {"x1", "x1"};
  issues = check_dataset(dup);
  REQUIRE(issues.size() == 1);
  CHECK(issues[0].invariant == "unique column names");
}

TEST_CASE("csv reader round trips and rejects bad cells") {
  const std::string path = temp_path("mote_csv_small.csv");
  {
    std::ofstream out(path);
    out << "x1,a,y1\n0.5,0,1.25\n-0.5,1,2.5\n";
  }
  const Table t = read_csv(path);
  CHECK(t.names == std::vector<std::string>{"x1", "a", "y1"});
  const Dataset d = dataset_from_table(t, "a", {"y1"});
  CHECK(d.n() == 2);
  CHECK(d.num_covariates() == 1);
  CHECK(d.covariates(0, 0) == 0.5);
  CHECK(check_dataset(d).empty());

  {
    std::ofstream out(path);
    out << "x1,a,y1\n0.5,0,NA\n";
  }
  CHECK_THROWS_WITH_AS(read_csv(path), "cannot parse cell 'NA' at row 1, column 'y1'",
                       DataError);
  std::remove(path.c_str());

  CHECK_THROWS_AS(read_csv(temp_path("mote_no_such_file.csv")), DataError);
}

TEST_CASE("large dataset survives a write/read cycle bit-exactly") {
  const std::int64_t n = 1000000;
  mathkit::Rng rng(2024, 0);
  Dataset d;
  d.covariates.resize(n, 2);
  d.treatment.resize(n);
  d.outcomes.resize(n, 1);
  d.covariate_names = {"x1", "x2"};
  d.outcome_names = {"y1"};
  for (std::int64_t i = 0; i < n; ++i) {
    d.covariates(i, 0) = rng.normal() * 1e3;
    d.covariates(i, 1) = rng.uniform() * 1e-7;
    d.treatment[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    d.outcomes(i, 0) = rng.normal();
  }
  const std::string path = temp_path("mote_csv_roundtrip.csv");
  write_csv(path, to_table(d, "a"));
  const Table back = read_csv(path);
  std::remove(path.c_str());
  const Dataset d2 = dataset_from_table(back, "a", {"y1"});
  CHECK((d2.covariates.array() == d.covariates.array()).all());
  CHECK((d2.treatment.array() == d.treatment.array()).all());
  CHECK((d2.outcomes.array() == d.outcomes.array()).all());
  CHECK(d2.covariate_names == d.covariate_names);
}
