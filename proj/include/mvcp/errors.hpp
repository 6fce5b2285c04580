#ifndef MVCP_ERRORS_HPP
#define MVCP_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace mvcp {

// Base class of all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

// The requested (n_cal, eps, n_q) combination admits no outlier budget, or a
// data split is too small to calibrate.
class InsufficientData : public Error {
 public:
  using Error::Error;
};

// Penalty homotopy exhausted its schedule without reaching feasibility.
class Infeasible : public Error {
 public:
  using Error::Error;
};

class NoBracket : public Error {
 public:
  using Error::Error;
};

class NonFiniteObjective : public Error {
 public:
  using Error::Error;
};

class SingularShape : public Error {
 public:
  using Error::Error;
};

class SingularCovariance : public Error {
 public:
  using Error::Error;
};

class NonPsdCovariance : public Error {
 public:
  using Error::Error;
};

// Removal bookkeeping lost the |M_out^k| = k*n_q invariant.
class DegenerateTrace : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line = -1) : Error(what), line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

class RaggedRows : public ParseError {
 public:
  using ParseError::ParseError;
};

class SchemaMismatch : public Error {
 public:
  using Error::Error;
};

class UnsupportedDimension : public Error {
 public:
  using Error::Error;
};

}  // namespace mvcp

#endif  // MVCP_ERRORS_HPP
