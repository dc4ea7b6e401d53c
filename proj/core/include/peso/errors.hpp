#pragma once

#include <stdexcept>
#include <string>

namespace peso {

// Violated caller contract (bad shapes, invalid arguments, missing context).
class PreconditionError : public std::invalid_argument {
public:
    explicit PreconditionError(const std::string& what) : std::invalid_argument(what) {}
};

// Numerical failure: non-convergence, NaN, overflow.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Cholesky/eigen factorization failure; carries the failing pivot index.
class FactorizationError : public NumericError {
public:
    FactorizationError(const std::string& what, long pivot)
        : NumericError(what + " (pivot " + std::to_string(pivot) + ")"), pivot_index(pivot) {}
    long pivot_index;
};

// Training loss exceeded the divergence threshold.
class DivergenceError : public NumericError {
public:
    DivergenceError(const std::string& what, long epoch)
        : NumericError(what + " (epoch " + std::to_string(epoch) + ")"), epoch_index(epoch) {}
    long epoch_index;
};

// Data splitting could not satisfy its contract.
class SplitError : public std::runtime_error {
public:
    explicit SplitError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input file.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, long line)
        : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_number(line) {}
    long line_number;
};

// Bad or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Checkpoint corruption or config-hash mismatch.
class CheckpointError : public std::runtime_error {
public:
    explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace peso
