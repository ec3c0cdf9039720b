#include "sgs/error.hpp"

namespace sgs {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidParameter: return "invalid_parameter";
        case ErrorCode::InsufficientData: return "insufficient_data";
        case ErrorCode::EstimationFailed: return "estimation_failed";
        case ErrorCode::InvalidGraph: return "invalid_graph";
        case ErrorCode::Diverged: return "diverged";
        case ErrorCode::EmptyCloud: return "empty_cloud";
        case ErrorCode::UndefinedLoss: return "undefined_loss";
        case ErrorCode::Config: return "config";
        case ErrorCode::Data: return "data";
    }
    return "unknown";
}

int exit_code(ErrorCode code) {
    switch (code) {
        case ErrorCode::Config: return 2;
        case ErrorCode::Diverged: return 4;
        default: return 3;
    }
}

}  // namespace sgs
