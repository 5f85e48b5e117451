#pragma once

#include <stdexcept>
#include <string>

namespace alen {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit an operation's contract.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Hyperparameters or layer settings that cannot produce a valid layer.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// API misuse, e.g. backward on a non-scalar or on an already consumed graph.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Out-of-domain argument values.
class InputError : public Error {
public:
    using Error::Error;
};

/// Malformed or truncated files.
class FormatError : public Error {
public:
    using Error::Error;
};

class NonFiniteLoss : public Error {
public:
    NonFiniteLoss(std::size_t step, double value)
        : Error("non-finite loss " + std::to_string(value) + " at step " + std::to_string(step)),
          step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

} // namespace alen
