#include "vipde/error.hpp"

namespace vipde {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::MissingParam: return "MissingParam";
        case ErrorCode::ConstraintViolated: return "ConstraintViolated";
        case ErrorCode::UnsupportedModel: return "UnsupportedModel";
        case ErrorCode::RatioUnbounded: return "RatioUnbounded";
        case ErrorCode::NonPositiveDensity: return "NonPositiveDensity";
        case ErrorCode::BadBox: return "BadBox";
        case ErrorCode::BadSize: return "BadSize";
        case ErrorCode::StencilFailure: return "StencilFailure";
        case ErrorCode::NonMonotoneRow: return "NonMonotoneRow";
        case ErrorCode::SolveFailure: return "SolveFailure";
        case ErrorCode::BadLambda: return "BadLambda";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::NewtonDiverged: return "NewtonDiverged";
        case ErrorCode::BadStep: return "BadStep";
        case ErrorCode::SingularRegression: return "SingularRegression";
        case ErrorCode::NoSolution: return "NoSolution";
        case ErrorCode::ConfigParse: return "ConfigParse";
    }
    return "Unknown";
}

}  // namespace vipde
