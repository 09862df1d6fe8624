#pragma once

#include <stdexcept>
#include <string>

namespace refblend {

// Error taxonomy shared by the library and the CLI. The CLI maps each
// category to a stable exit status: usage 2, data 3, numeric 4.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& msg)
        : std::runtime_error(msg), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

// Caller passed invalid arguments (bad axis, shape mismatch, out-of-range step).
class UsageError : public Error {
public:
    UsageError(std::string code, const std::string& msg) : Error(std::move(code), msg) {}
};

// Input data is unusable (missing file, vocabulary mismatch, degenerate mask).
class DataError : public Error {
public:
    DataError(std::string code, const std::string& msg) : Error(std::move(code), msg) {}
};

// Computation produced non-finite values or diverged.
class NumericError : public Error {
public:
    NumericError(std::string code, const std::string& msg) : Error(std::move(code), msg) {}
};

} // namespace refblend
