#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vipde {

/// Failure categories raised by the library. The CLI maps them onto exit codes.
enum class ErrorCode {
    MissingParam,
    ConstraintViolated,
    UnsupportedModel,
    RatioUnbounded,
    NonPositiveDensity,
    BadBox,
    BadSize,
    StencilFailure,
    NonMonotoneRow,
    SolveFailure,
    BadLambda,
    LengthMismatch,
    NewtonDiverged,
    BadStep,
    SingularRegression,
    NoSolution,
    ConfigParse,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

    /// Backward time index at which a solver error occurred, when known.
    std::optional<std::size_t> time_index() const noexcept { return time_index_; }

    Error with_time_index(std::size_t k) const {
        Error e = *this;
        e.time_index_ = k;
        return e;
    }

private:
    ErrorCode code_;
    std::optional<std::size_t> time_index_;
};

}  // namespace vipde
