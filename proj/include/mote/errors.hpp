#pragma once

#include <stdexcept>
#include <string>

namespace mote {

/// Bad input: invalid configuration, unparseable data, violated data contract.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Estimation broke down numerically: degenerate variance, singular system.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mote
