#pragma once

#include <stdexcept>
#include <string>

namespace maefuse {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration, bad CLI arguments, unreadable or malformed input
// files. Maps to process exit code 2.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Malformed or inconsistent data encountered while ingesting volumes,
// manifests or checkpoints. Maps to process exit code 2.
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// A caller violated an operation's contract (shape mismatch, out-of-range
// label, masked encoding where full encoding is required, ...).
class ContractError : public Error {
public:
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf surfaced during numerical work. Maps to process exit code 3.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

} // namespace maefuse
