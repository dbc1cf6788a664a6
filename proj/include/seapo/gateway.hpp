#pragma once

#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace seapo {

enum class Role { system, user, assistant };

struct Message {
    Role role = Role::user;
    std::string content;
};

struct CompletionRequest {
    std::string model;
    std::vector<Message> messages;
    double temperature = 0.0;
    int max_tokens = 1024;
    std::optional<int64_t> seed;
};

enum class FinishReason { stop, length, other };

struct CompletionResult {
    std::string text;
    FinishReason finish_reason = FinishReason::stop;
    int64_t latency_ms = 0;
    int attempts = 1;
};

enum class BackendKind { scripted, http };
enum class ScriptedMode { marker, canned };

struct BackendConfig {
    BackendKind kind = BackendKind::scripted;
    std::optional<std::string> base_url;
    std::string api_key_env = "SEAPO_API_KEY";
    int64_t timeout_ms = 30000;
    int max_attempts = 3;
    int64_t backoff_base_ms = 250;
    double backoff_factor = 2.0;
    int max_in_flight = 4;
    std::optional<ScriptedMode> scripted_mode;
    // Replay list for canned mode, consumed in order across calls.
    std::vector<std::string> script;
    // When set, one JSON object per attempt is appended here:
    // {"ts","attempt","status","latency_ms","model"}.
    std::optional<std::string> audit_log;
};

// Throws on http without base_url, scripted without mode, factor <= 1, etc.
void validate(const BackendConfig& config);
// Throws on empty messages or a final message that is not from the user.
void validate(const CompletionRequest& request);

// Deterministic reply rules for marker mode: recognizes each rendered
// template by a sentinel phrase unique to it and answers from the embedded
// fields. Injection prompts echo the original response plus an
// " [ERR:<type>]" marker, severity prompts an " [SEV:<level>]" marker;
// detection answers "yes" iff the answer carries the matching marker;
// scoring answers "7" for unmarked and "4" for marked answers; comparison
// prefers the unmarked side and ties otherwise. Pure function of the
// request; throws UnrecognizedPrompt when no sentinel matches.
std::string marker_reply(const CompletionRequest& request);

// Bounds the number of concurrently executing backend calls per gateway.
class InFlightLimiter {
public:
    explicit InFlightLimiter(int max_in_flight);
    void acquire();
    void release();

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    int available_;
};

class Gateway {
public:
    virtual ~Gateway() = default;

    // Thread-safe; at most max_in_flight calls run in the backend at once.
    virtual CompletionResult complete(const CompletionRequest& request) = 0;

    // Short backend label recorded in injected-record metadata.
    virtual std::string name() const = 0;
};

std::unique_ptr<Gateway> make_gateway(const BackendConfig& config);

} // namespace seapo
