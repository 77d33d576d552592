#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace affect {

// Base for every error raised by the library. Each subclass maps onto one
// failure category; the CLI turns categories into exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ContractError : public Error {
public:
    using Error::Error;
};

class WindowError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class AlignmentError : public Error {
public:
    using Error::Error;
};

class EvaluationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Malformed binary or text file. offset is the byte position where parsing
// stopped making sense.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), detail_(what), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }
    // Message without the offset suffix.
    const std::string& detail() const noexcept { return detail_; }
    // Same error with `prefix: ` prepended, e.g. the file name.
    FormatError with_context(const std::string& prefix) const { return {prefix + ": " + detail_, offset_}; }

private:
    std::string detail_;
    std::uint64_t offset_;
};

// Non-finite gradient or value detected during optimization.
class NumericError : public Error {
public:
    NumericError(const std::string& what, std::string param)
        : Error(what), param_(std::move(param)) {}

    const std::string& param() const noexcept { return param_; }

private:
    std::string param_;
};

}  // namespace affect
