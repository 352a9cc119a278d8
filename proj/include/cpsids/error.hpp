#pragma once

#include <stdexcept>
#include <string>

namespace cpsids {

// Base of every error the library throws. The CLI maps the subclasses onto
// exit codes (2 for data/config problems, 3 for broken invariants).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A value outside the physical or numeric domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Bad configuration or unusable input data (files, counts, labels).
class DataError : public Error {
 public:
  using Error::Error;
};

// Something that must never happen if the library is correct.
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace cpsids
