#pragma once

#include <stdexcept>
#include <string>

namespace qpc {

// Base class for everything thrown by this library. CLI maps these to exit
// code 3 (runtime failure); config/parse problems map to exit code 2.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct ParseError : ConfigError {
    using ConfigError::ConfigError;
};

// Conditioning design is collinear beyond tolerance.
struct RankDeficient : Error {
    using Error::Error;
};

// A column has (numerically) zero variance where a correlation is required.
struct DegenerateColumn : Error {
    using Error::Error;
};

// OLS residual variance of the candidate is ~0: the QPC denominator vanishes.
struct DegeneratePredictor : Error {
    using Error::Error;
};

struct NotConverged : Error {
    int iterations;
    explicit NotConverged(int iters, const std::string& what)
        : Error(what), iterations(iters) {}
};

// The requested innovation covariance is not positive definite; purely a
// function of the configured (family, p, rho, phi), hence a ConfigError.
struct CovarianceNotPD : ConfigError {
    using ConfigError::ConfigError;
};

struct UnknownTcode : ParseError {
    using ParseError::ParseError;
};

struct NonPositiveForLog : Error {
    using Error::Error;
};

// Asking for a series (or forecast target) that the panel does not carry is a
// configuration mistake, so these map to exit code 2 like other ConfigErrors.
struct UnknownSeries : ConfigError {
    using ConfigError::ConfigError;
};

struct EmptyFilter : ConfigError {
    using ConfigError::ConfigError;
};

// Every remaining candidate failed at some screening step with an empty trace.
struct StalledSelection : Error {
    using Error::Error;
};

// Perfectly interpolating prefix: log of the loss is undefined.
struct NonPositiveLoss : Error {
    using Error::Error;
};

}  // namespace qpc
