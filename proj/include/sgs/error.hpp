#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sgs {

enum class ErrorCode {
    InvalidParameter,
    InsufficientData,
    EstimationFailed,
    InvalidGraph,
    Diverged,
    EmptyCloud,
    UndefinedLoss,
    Config,
    Data,
};

std::string_view to_string(ErrorCode code);

/// Exit status used by the command-line tools for a given error category.
int exit_code(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) fail(code, message);
}

}  // namespace sgs
