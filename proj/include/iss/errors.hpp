#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace iss {

/// Input data or configuration violates a documented contract.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what, std::optional<std::size_t> row = std::nullopt)
        : std::runtime_error(row ? "row " + std::to_string(*row) + ": " + what : what), row_(row) {}

    /// One-based data row (header excluded) the error refers to, when known.
    std::optional<std::size_t> row() const { return row_; }

private:
    std::optional<std::size_t> row_;
};

/// Base for failures of a numerical procedure on otherwise valid input.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConvergenceError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class SingularMatrixError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// A Cox coefficient diverged past the monotone-likelihood bound.
class MonotoneLikelihoodError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Logistic regression separated perfectly; MLE does not exist.
class SeparationError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace iss
