#include "personakit/error.hpp"

#include <spdlog/spdlog.h>

namespace personakit {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::MissingFile: return "MissingFile";
        case ErrorCode::SchemaError: return "SchemaError";
        case ErrorCode::DuplicateStageLabel: return "DuplicateStageLabel";
        case ErrorCode::UnknownKind: return "UnknownKind";
        case ErrorCode::UnknownStageTag: return "UnknownStageTag";
        case ErrorCode::EmptyRecord: return "EmptyRecord";
        case ErrorCode::EmptyDialogue: return "EmptyDialogue";
        case ErrorCode::ProviderUnavailable: return "ProviderUnavailable";
        case ErrorCode::CredentialMissing: return "CredentialMissing";
        case ErrorCode::MockExhausted: return "MockExhausted";
        case ErrorCode::EmptyText: return "EmptyText";
        case ErrorCode::DimMismatch: return "DimMismatch";
        case ErrorCode::EmptyGeneration: return "EmptyGeneration";
        case ErrorCode::UnparseableAnnotation: return "UnparseableAnnotation";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::MissingStageToken: return "MissingStageToken";
        case ErrorCode::SegmentTooShort: return "SegmentTooShort";
        case ErrorCode::PoolTooSmall: return "PoolTooSmall";
        case ErrorCode::IdenticalResponse: return "IdenticalResponse";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::UnparseableVerdict: return "UnparseableVerdict";
        case ErrorCode::MissingModelEntry: return "MissingModelEntry";
        case ErrorCode::EmptyVerdicts: return "EmptyVerdicts";
        case ErrorCode::EndpointUnavailable: return "EndpointUnavailable";
        case ErrorCode::TooShort: return "TooShort";
        case ErrorCode::EndpointsUnconfigured: return "EndpointsUnconfigured";
        case ErrorCode::SessionNotFound: return "SessionNotFound";
        case ErrorCode::WrongState: return "WrongState";
        case ErrorCode::EndpointFailure: return "EndpointFailure";
        case ErrorCode::RoundsIncomplete: return "RoundsIncomplete";
        case ErrorCode::RangeViolation: return "RangeViolation";
        case ErrorCode::DuplicateSubmission: return "DuplicateSubmission";
        case ErrorCode::InsufficientData: return "InsufficientData";
        case ErrorCode::UnknownCommand: return "UnknownCommand";
        case ErrorCode::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void warn(std::vector<Warning>& sink, ErrorCode code, std::string message) {
    spdlog::warn("{}: {}", to_string(code), message);
    sink.push_back({code, std::move(message)});
}

}  // namespace personakit
