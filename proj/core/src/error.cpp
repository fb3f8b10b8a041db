#include "wavy/error.hpp"

namespace wavy {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kSinkhornNoConvergence: return "SinkhornNoConvergence";
    case ErrorCode::kZeroRow: return "ZeroRow";
    case ErrorCode::kAsymmetricInput: return "AsymmetricInput";
    case ErrorCode::kFormMismatch: return "FormMismatch";
    case ErrorCode::kVocabOverflow: return "VocabOverflow";
    case ErrorCode::kGraphCycle: return "GraphCycle";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace wavy
