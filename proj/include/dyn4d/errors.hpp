#pragma once

#include <stdexcept>
#include <string>

namespace dyn4d {

// Error hierarchy. The CLI maps ContractError (and subclasses) to exit code 1
// and IoError (and subclasses) to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ContractError : public Error {
public:
    using Error::Error;
};

class InvalidParameter : public ContractError {
public:
    using ContractError::ContractError;
};

class StateError : public ContractError {
public:
    using ContractError::ContractError;
};

/// A metric was requested over an empty set of valid pixels.
class UndefinedMetric : public ContractError {
public:
    using ContractError::ContractError;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ParseError : public IoError {
public:
    ParseError(const std::string &what, std::size_t offset)
        : IoError(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

} // namespace dyn4d
