#pragma once

#include <stdexcept>
#include <string>

namespace escim {

// Error taxonomy mapped to CLI exit codes:
//   ConfigError, IoError            -> 2
//   ContractError and subclasses    -> 3
//   NumericError and subclasses     -> 4
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : ContractError {
    explicit ShapeError(const std::string& msg) : ContractError(msg) {}
};

struct ParseError : ContractError {
    explicit ParseError(const std::string& msg) : ContractError(msg) {}
};

struct IntegrityError : ContractError {
    explicit IntegrityError(const std::string& msg) : ContractError(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CalibrationError : NumericError {
    explicit CalibrationError(const std::string& msg) : NumericError(msg) {}
};

struct UndefinedMetricError : NumericError {
    explicit UndefinedMetricError(const std::string& msg) : NumericError(msg) {}
};

}  // namespace escim
