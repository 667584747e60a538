#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace personakit {

enum class ErrorCode {
    // corpus
    MissingFile,
    SchemaError,
    DuplicateStageLabel,
    UnknownKind,
    UnknownStageTag,
    EmptyRecord,
    EmptyDialogue,
    // providers
    ProviderUnavailable,
    CredentialMissing,
    MockExhausted,
    EmptyText,
    DimMismatch,
    // annotation
    EmptyGeneration,
    UnparseableAnnotation,
    // curation
    EmptyInput,
    MissingStageToken,
    SegmentTooShort,
    // preference
    PoolTooSmall,
    IdenticalResponse,
    // evaluation
    LengthMismatch,
    UnparseableVerdict,
    MissingModelEntry,
    EmptyVerdicts,
    // arena
    EndpointUnavailable,
    TooShort,
    // study
    EndpointsUnconfigured,
    SessionNotFound,
    WrongState,
    EndpointFailure,
    RoundsIncomplete,
    RangeViolation,
    DuplicateSubmission,
    InsufficientData,
    // cli
    UnknownCommand,
    ConfigError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

// Non-fatal condition: the offending record was skipped and processing went on.
struct Warning {
    ErrorCode code;
    std::string message;
};

// Logs the warning to stderr and appends it to `sink`.
void warn(std::vector<Warning>& sink, ErrorCode code, std::string message);

}  // namespace personakit
