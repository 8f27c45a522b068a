#pragma once

#include <stdexcept>
#include <string>

namespace disent {

// Every failure raised by the library derives from Error so callers (the CLI,
// the HTTP service) can map categories onto exit codes / status codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration values or files. The CLI maps this to exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Tensor shapes that violate an architectural contract.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Precondition violations on arguments (bad attribute index, b < 2, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Manifest or image ingestion failures; the message names the row.
class IngestionError : public Error {
public:
    using Error::Error;
};

class SplitError : public Error {
public:
    using Error::Error;
};

/// A loss term became NaN/Inf. `term()` names the offending term.
class DivergenceError : public Error {
public:
    DivergenceError(std::string term, const std::string& what)
        : Error(what), term_(std::move(term)) {}
    const std::string& term() const noexcept { return term_; }

private:
    std::string term_;
};

/// The substrate cannot provide a required capability (second-order grads).
class CapabilityError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

/// Statistic is undefined for the given input (e.g. degenerate Hopkins box).
class UndefinedStatisticError : public Error {
public:
    using Error::Error;
};

}  // namespace disent
