#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace capval {

// Base for every error the library raises. Callers that only care about
// "something in capval failed" catch this.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class PreconditionError : public Error {
public:
    using Error::Error;
};

class RangeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ConsistencyError : public Error {
public:
    using Error::Error;
};

class DuplicateError : public Error {
public:
    DuplicateError(const std::string& what, std::size_t line)
        : Error(what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Parse failures keep the offending input around for audit.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::string raw = {}, std::size_t line = 0)
        : Error(what), raw_(std::move(raw)), line_(line) {}
    const std::string& raw() const noexcept { return raw_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string raw_;
    std::size_t line_;
};

class OrderingError : public Error {
public:
    OrderingError(const std::string& what, std::size_t row)
        : Error(what), row_(row) {}
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

class EndpointError : public Error {
public:
    using Error::Error;
};

// Retryable endpoint failure (connection refused, 5xx, 429, timeout).
class TransientEndpointError : public EndpointError {
public:
    using EndpointError::EndpointError;
};

class EmptyOutputError : public EndpointError {
public:
    using EndpointError::EndpointError;
};

class EmptyExpansionError : public ParseError {
public:
    using ParseError::ParseError;
};

class FitError : public Error {
public:
    using Error::Error;
};

class InsufficientDataError : public FitError {
public:
    using FitError::FitError;
};

} // namespace capval
