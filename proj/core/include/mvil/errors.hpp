#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mvil {

/// Base for every error the library raises. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

class ShapeError : public ContractError {
public:
    using ContractError::ContractError;
};

class ConfigError : public ContractError {
public:
    using ContractError::ContractError;
};

class VocabularyError : public ContractError {
public:
    using ContractError::ContractError;
};

/// NaN reached an operation that refuses to propagate it.
class NumericError : public Error {
public:
    using Error::Error;
};

class UnsupportedLayerError : public ContractError {
public:
    using ContractError::ContractError;
};

/// Malformed checkpoint or data file. `offset` is the byte position where decoding failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

}  // namespace mvil
