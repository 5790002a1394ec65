// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace regnet {

// Base class for every error raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Operand shapes incompatible with the requested operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Input outside an operation's mathematical domain (e.g. log of a
// non-positive value); the message names the offending index.
class DomainError : public Error {
public:
    using Error::Error;
};

// A finite-input computation produced a non-finite value.
class NumericError : public Error {
public:
    using Error::Error;
};

// Batch too small for the requested statistic.
class DegenerateBatchError : public Error {
public:
    using Error::Error;
};

// API contract violated by the caller (missing gradient, reused graph, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

// Malformed textual input (config file, manifest, model header).
class ParseError : public Error {
public:
    using Error::Error;
};

// Filesystem-level failure; the message names the path.
class IoError : public Error {
public:
    using Error::Error;
};

// Invalid or inconsistent configuration value.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Not enough samples to carry out calibration or evaluation.
class InsufficientDataError : public Error {
public:
    using Error::Error;
};

// A dataset with no usable samples.
class DegenerateDatasetError : public Error {
public:
    using Error::Error;
};

// Training produced a non-finite loss; carries the last telemetry record.
class TrainingDivergedError : public Error {
public:
    TrainingDivergedError(const std::string& what, std::string last_telemetry)
        : Error(what), last_telemetry_(std::move(last_telemetry)) {}

    const std::string& last_telemetry() const { return last_telemetry_; }

private:
    std::string last_telemetry_;
};

}  // namespace regnet
