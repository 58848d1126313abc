#pragma once

#include <stdexcept>
#include <string>

namespace patchpad {

/// Failure category; the CLI maps each category to a distinct exit code.
enum class ErrorKind {
    invalid_argument,
    io,
    format,
    numeric,
    not_found,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline Error invalid_argument(const std::string& what) { return {ErrorKind::invalid_argument, what}; }
inline Error io_error(const std::string& what) { return {ErrorKind::io, what}; }
inline Error numeric_error(const std::string& what) { return {ErrorKind::numeric, what}; }

}  // namespace patchpad
