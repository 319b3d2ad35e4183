#ifndef GRFOPT_ERRORS_HPP
#define GRFOPT_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace grfopt {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
  using Error::Error;
};

/// A computed quantity left the domain where it is finite or defined.
class NumericalDomainError : public Error {
public:
  using Error::Error;
};

/// Two eigenvalues of a parameterized matrix are too close to separate.
class DegenerateEigenvalueError : public NumericalDomainError {
public:
  DegenerateEigenvalueError(std::size_t first, std::size_t second, double gap)
      : NumericalDomainError("degenerate eigenvalues: modes " + std::to_string(first) + " and " +
                             std::to_string(second) + " differ by " + std::to_string(gap)),
        first_(first), second_(second) {}

  std::size_t first() const { return first_; }
  std::size_t second() const { return second_; }

private:
  std::size_t first_;
  std::size_t second_;
};

/// Covariance carries no variance at all, or is not positive semidefinite.
class DegenerateCovarianceError : public NumericalDomainError {
public:
  using NumericalDomainError::NumericalDomainError;
};

/// A retained K-L mode has zero variance, so its amplitude is not differentiable.
class SingularModeError : public NumericalDomainError {
public:
  using NumericalDomainError::NumericalDomainError;
};

class BoundViolationError : public NumericalDomainError {
public:
  using NumericalDomainError::NumericalDomainError;
};

/// Evaluating the functional on one Monte Carlo sample failed.
class SampleEvaluationError : public NumericalDomainError {
public:
  SampleEvaluationError(std::size_t sample, const std::string& what)
      : NumericalDomainError("sample " + std::to_string(sample) + ": " + what), sample_(sample) {}

  std::size_t sample() const { return sample_; }

private:
  std::size_t sample_;
};

class InferenceError : public NumericalDomainError {
public:
  using NumericalDomainError::NumericalDomainError;
};

class InfeasibleSubproblemError : public Error {
public:
  using Error::Error;
};

/// An objective callback threw; carries the iterate at which it happened.
class CallbackError : public Error {
public:
  CallbackError(const std::string& what, std::vector<double> iterate)
      : Error(what), iterate_(std::move(iterate)) {}

  const std::vector<double>& iterate() const { return iterate_; }

private:
  std::vector<double> iterate_;
};

class IoError : public Error {
public:
  using Error::Error;
};

} // namespace grfopt

#endif // GRFOPT_ERRORS_HPP
