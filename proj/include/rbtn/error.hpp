#pragma once

#include <stdexcept>
#include <string>

namespace rbtn {

// Base of every error thrown by the library. code() is a short stable tag used
// by the CLI and the HTTP service when reporting failures.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* code() const noexcept { return "error"; }
};

class ConfigError : public Error {
public:
    using Error::Error;
    const char* code() const noexcept override { return "config"; }
};

class ShapeError : public Error {
public:
    using Error::Error;
    const char* code() const noexcept override { return "shape"; }
};

class UsageError : public Error {
public:
    using Error::Error;
    const char* code() const noexcept override { return "usage"; }
};

class NumericError : public Error {
public:
    using Error::Error;
    const char* code() const noexcept override { return "numeric"; }
};

class DataError : public Error {
public:
    using Error::Error;
    const char* code() const noexcept override { return "data"; }
};

class IoError : public Error {
public:
    using Error::Error;
    const char* code() const noexcept override { return "io"; }
};

} // namespace rbtn
