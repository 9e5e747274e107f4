#pragma once

#include <stdexcept>
#include <string>

namespace pfadseg {

/// Base of every error raised by the library. `kind()` is the stable
/// machine-readable tag written into CLI error records.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "error"; }
};

class InvalidArgument : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "invalid_argument"; }
};

class ConfigError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "configuration"; }
};

class LoadError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "load"; }
};

class ValidationError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "validation"; }
};

class UndefinedMetric : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "undefined_metric"; }
};

/// Training produced a non-finite or exploding loss.
class DivergenceError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "divergence"; }
};

class UsageError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "usage"; }
};

}  // namespace pfadseg
