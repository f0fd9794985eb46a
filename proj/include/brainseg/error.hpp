#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace brainseg {

enum class ErrorCode {
    MissingFile,
    CorruptHeader,
    NonFiniteData,
    ToolNotFound,
    ToolFailure,
    Timeout,
    MapShapeMismatch,
    DegenerateInput,
    InvalidRange,
    InvalidArgument,
    EmptySlice,
    ShapeMismatch,
    DuplicateIds,
    ManifestWriteFailure,
    IncompatibleCheckpoint,
    MissingKeys,
    NonFiniteActivation,
    NonFiniteLoss,
    EmptyDataset,
    DivergedLoss,
    MissingManifest,
    EmptyManifest,
    OutOfRange,
    IoFailure,
    InvalidConfig,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Exception carrying a machine-checkable error kind.
class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& message);

    ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

} // namespace brainseg
