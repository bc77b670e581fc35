// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mgpt {

enum class ErrorKind {
    Domain,
    Data,
    Io,
    Config,
    Parse,
    Training,
    Generation,
};

std::string_view to_string(ErrorKind kind);

/// Base of every error thrown by the library. `kind()` is what the CLI
/// reports in its machine-readable error record.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class DomainError : public Error {
public:
    explicit DomainError(const std::string& m) : Error(ErrorKind::Domain, m) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& m) : Error(ErrorKind::Data, m) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& m) : Error(ErrorKind::Io, m) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& m) : Error(ErrorKind::Config, m) {}
};

class ParseError : public Error {
public:
    ParseError(const std::string& m, std::string raw_text, long position = -1)
        : Error(ErrorKind::Parse, m), raw_text_(std::move(raw_text)), position_(position) {}

    const std::string& raw_text() const noexcept { return raw_text_; }
    /// Index of the offending token, or -1 when no token was usable.
    long position() const noexcept { return position_; }

private:
    std::string raw_text_;
    long position_;
};

class TrainingError : public Error {
public:
    TrainingError(const std::string& m, long last_finite_step = -1)
        : Error(ErrorKind::Training, m), last_finite_step_(last_finite_step) {}

    long last_finite_step() const noexcept { return last_finite_step_; }

private:
    long last_finite_step_;
};

class GenerationError : public Error {
public:
    GenerationError(const std::string& m, std::string raw_answer)
        : Error(ErrorKind::Generation, m), raw_answer_(std::move(raw_answer)) {}

    const std::string& raw_answer() const noexcept { return raw_answer_; }

private:
    std::string raw_answer_;
};

}  // namespace mgpt
