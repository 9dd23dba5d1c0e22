#pragma once

#include <stdexcept>
#include <string>

namespace colorflow {

// Error categories map onto the CLI exit codes:
//   ValidationError -> 1, NumericError -> 2, IoError -> 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ValidationError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace colorflow
