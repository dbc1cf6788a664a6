#pragma once

#include <stdexcept>
#include <string>

namespace seapo {

// Every failure the library reports carries one of these codes so callers
// (batch runners, the CLI exit-code mapping, tests) can dispatch on kind
// without parsing message text.
enum class ErrorCode {
    missing_binding,
    unknown_binding,
    invalid_argument,
    missing_credential,
    backend_exhausted,
    timeout,
    malformed_response,
    unrecognized_prompt,
    script_exhausted,
    injection_no_change,
    injection_empty,
    judge_parse,
    score_out_of_range,
    insufficient_injected,
    schema,
    validation,
    degenerate_batch,
    empty_completion,
    id_out_of_range,
    shape_mismatch,
    io,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, std::string message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
          code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

} // namespace seapo
