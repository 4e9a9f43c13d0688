#pragma once

#include <stdexcept>
#include <string>

namespace tempo {

// Base for every error raised by the library. The CLI maps the subclasses to
// exit codes (format/validation -> 2, duration -> 3, numeric -> 4).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct DomainError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct ValidationError : Error {
  using Error::Error;
};

struct DurationMismatchError : Error {
  using Error::Error;
};

} // namespace tempo
