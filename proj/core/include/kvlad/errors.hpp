#pragma once

#include <stdexcept>
#include <string>

namespace kvlad {

// Malformed or mismatched inputs: bad files, geometry/dimension mismatches,
// identity mismatches between artifacts.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failures: Cholesky on a non-SPD matrix, inconsistent kernel
// values, degenerate eigensystems.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace kvlad
