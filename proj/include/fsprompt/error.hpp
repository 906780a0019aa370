#pragma once

#include <stdexcept>
#include <string>

namespace fsprompt {

// Base of every error thrown by the library. `code` is a short stable
// identifier used by the CLI's machine-readable error line.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& message) : Error("shape_mismatch", message) {}
};

class GraphError : public Error {
public:
    explicit GraphError(const std::string& message) : Error("graph", message) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message) : Error("config", message) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& message) : Error("io", message) {}
};

}  // namespace fsprompt
