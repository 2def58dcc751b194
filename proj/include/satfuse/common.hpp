#pragma once

#include <stdexcept>
#include <string>

namespace satfuse {

// Error categories map 1:1 onto process exit codes (see tools/):
// config -> 2, io -> 3, numeric -> 4.
enum class ErrorKind { config = 2, io = 3, numeric = 4 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what_arg)
        : std::runtime_error(what_arg), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

// Invalid configuration value or malformed request.
struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error(ErrorKind::config, "config: " + m) {}
};

// Filesystem failures (open/read/write/rename).
struct IoError : Error {
    explicit IoError(const std::string& m) : Error(ErrorKind::io, "io: " + m) {}
};

// A file exists but its contents are not what the format requires.
struct FormatError : Error {
    explicit FormatError(const std::string& m) : Error(ErrorKind::io, "format: " + m) {}
};

// Tensor shape disagreement between operands.
struct ShapeError : Error {
    explicit ShapeError(const std::string& m) : Error(ErrorKind::numeric, "shape: " + m) {}
};

// Non-finite values or invalid numeric state at runtime.
struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error(ErrorKind::numeric, "numeric: " + m) {}
};

} // namespace satfuse
