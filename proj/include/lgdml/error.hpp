#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lgdml {

enum class ErrorCode {
    ZeroRow,
    DimMismatch,
    ShapeMismatch,
    NonPositiveTemperature,
    NoValidPairs,
    NoValidTriplets,
    EmptyTargetList,
    EmptyList,
    MissingClassInExternalMatrix,
    EmptyClass,
    KTooLarge,
    MissingPseudoName,
    InsufficientClasses,
    GuidanceInputMissing,
    NonFiniteLoss,
    UnknownLoss,
    KExceedsGallery,
    DegenerateInput,
    MissingClassName,
    BadMagic,
    TruncatedPayload,
    NonFiniteValue,
    CountMismatch,
    DuplicateName,
    DegenerateSpec,
    BadConfig,
    Io,
    InvalidArgument,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace lgdml
