#pragma once

#include <stdexcept>
#include <string>

namespace mlr {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Configuration or precondition problems. CLI exit code 2.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Instance construction could not satisfy the separation constraints.
class FeasibilityError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// A lemma hypothesis does not hold for the given instance.
class HypothesisError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Closed-form computation requested for a noise family without one.
class UnsupportedNoiseError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Raw-sample budget exceeds the configured cap. CLI exit code 3.
class InfeasibleBudgetError : public Error {
public:
    using Error::Error;
};

/// Runtime numerical failures. CLI exit code 4.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// The thresholding band retained no samples.
class EmptySelectionError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Point covariance has numerical rank below the requested subspace dimension.
class RankError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// A cluster emptied and reseeding failed across all restarts.
class DegenerateClusterError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Cluster mean norm below the direction floor.
class NearZeroMeanError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Cluster too small for a stable magnitude estimate.
class SmallClusterError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Magnitude ratio came out nonpositive or its denominator vanished.
class SignError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Weighted normal equations stayed rank-deficient after ridge regularization.
class SingularSystemError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

} // namespace mlr
