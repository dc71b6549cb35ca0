#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ostrovsky {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameters, malformed input files, violated invariants.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse: index out of range, mismatched dimensions, stale data.
class UsageError : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public Error {
 public:
  SingularMatrixError(const std::string& what, std::size_t pivot)
      : Error(what), pivot_(pivot) {}
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

/// A pivot block of the block-tridiagonal trace system is singular.
class SingularBlockError : public Error {
 public:
  SingularBlockError(const std::string& what, std::size_t block)
      : Error(what), block_(block) {}
  std::size_t block() const noexcept { return block_; }

 private:
  std::size_t block_;
};

/// The element-interior block of the local HDG problem is singular.
class SingularElementError : public Error {
 public:
  SingularElementError(const std::string& what, int element)
      : Error(what), element_(element) {}
  int element() const noexcept { return element_; }

 private:
  int element_;
};

/// Newton iteration of a time step did not reach its tolerance.
class StepFailure : public Error {
 public:
  StepFailure(const std::string& what, int step, double last_residual)
      : Error(what), step_(step), residual_(last_residual) {}
  int step() const noexcept { return step_; }
  double last_residual() const noexcept { return residual_; }

 private:
  int step_;
  double residual_;
};

class PetviashviliError : public Error {
 public:
  PetviashviliError(const std::string& what, std::vector<double> history)
      : Error(what), history_(std::move(history)) {}
  const std::vector<double>& residual_history() const noexcept { return history_; }

 private:
  std::vector<double> history_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ostrovsky
