#include "brainseg/error.hpp"

namespace brainseg {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::CorruptHeader: return "CorruptHeader";
    case ErrorCode::NonFiniteData: return "NonFiniteData";
    case ErrorCode::ToolNotFound: return "ToolNotFound";
    case ErrorCode::ToolFailure: return "ToolFailure";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::MapShapeMismatch: return "MapShapeMismatch";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::InvalidRange: return "InvalidRange";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::EmptySlice: return "EmptySlice";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DuplicateIds: return "DuplicateIds";
    case ErrorCode::ManifestWriteFailure: return "ManifestWriteFailure";
    case ErrorCode::IncompatibleCheckpoint: return "IncompatibleCheckpoint";
    case ErrorCode::MissingKeys: return "MissingKeys";
    case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::MissingManifest: return "MissingManifest";
    case ErrorCode::EmptyManifest: return "EmptyManifest";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

} // namespace brainseg
