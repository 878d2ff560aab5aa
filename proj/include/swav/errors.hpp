#pragma once

#include <stdexcept>
#include <string>

namespace swav {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "error"; }
};

class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + msg), line_(line) {}
    std::size_t line() const { return line_; }
    const char* kind() const noexcept override { return "parse_error"; }

private:
    std::size_t line_;
};

class IoError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "io_error"; }
};

class ValidationError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "validation_error"; }
};

class ConfigError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "config_error"; }
};

class TrainingDiverged : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "training_diverged"; }
};

}  // namespace swav
