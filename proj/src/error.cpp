#include "seapo/error.hpp"

namespace seapo {

const char* error_code_name(ErrorCode code) {
    switch (code) {
    case ErrorCode::missing_binding: return "MissingBinding";
    case ErrorCode::unknown_binding: return "UnknownBinding";
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::missing_credential: return "MissingCredential";
    case ErrorCode::backend_exhausted: return "BackendExhausted";
    case ErrorCode::timeout: return "Timeout";
    case ErrorCode::malformed_response: return "MalformedResponse";
    case ErrorCode::unrecognized_prompt: return "UnrecognizedPrompt";
    case ErrorCode::script_exhausted: return "ScriptExhausted";
    case ErrorCode::injection_no_change: return "InjectionNoChange";
    case ErrorCode::injection_empty: return "InjectionEmpty";
    case ErrorCode::judge_parse: return "JudgeParseError";
    case ErrorCode::score_out_of_range: return "ScoreOutOfRange";
    case ErrorCode::insufficient_injected: return "InsufficientInjected";
    case ErrorCode::schema: return "SchemaError";
    case ErrorCode::validation: return "ValidationError";
    case ErrorCode::degenerate_batch: return "DegenerateBatch";
    case ErrorCode::empty_completion: return "EmptyCompletion";
    case ErrorCode::id_out_of_range: return "IdOutOfRange";
    case ErrorCode::shape_mismatch: return "ShapeMismatch";
    case ErrorCode::io: return "IoError";
    }
    return "UnknownError";
}

} // namespace seapo
