#include "lgdml/error.hpp"

namespace lgdml {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::ZeroRow: return "ZeroRow";
        case ErrorCode::DimMismatch: return "DimMismatch";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
        case ErrorCode::NoValidPairs: return "NoValidPairs";
        case ErrorCode::NoValidTriplets: return "NoValidTriplets";
        case ErrorCode::EmptyTargetList: return "EmptyTargetList";
        case ErrorCode::EmptyList: return "EmptyList";
        case ErrorCode::MissingClassInExternalMatrix: return "MissingClassInExternalMatrix";
        case ErrorCode::EmptyClass: return "EmptyClass";
        case ErrorCode::KTooLarge: return "KTooLarge";
        case ErrorCode::MissingPseudoName: return "MissingPseudoName";
        case ErrorCode::InsufficientClasses: return "InsufficientClasses";
        case ErrorCode::GuidanceInputMissing: return "GuidanceInputMissing";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::UnknownLoss: return "UnknownLoss";
        case ErrorCode::KExceedsGallery: return "KExceedsGallery";
        case ErrorCode::DegenerateInput: return "DegenerateInput";
        case ErrorCode::MissingClassName: return "MissingClassName";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::TruncatedPayload: return "TruncatedPayload";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::CountMismatch: return "CountMismatch";
        case ErrorCode::DuplicateName: return "DuplicateName";
        case ErrorCode::DegenerateSpec: return "DegenerateSpec";
        case ErrorCode::BadConfig: return "BadConfig";
        case ErrorCode::Io: return "Io";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

}  // namespace lgdml
