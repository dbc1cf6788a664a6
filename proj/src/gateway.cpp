#include "seapo/gateway.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <random>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "seapo/error.hpp"
#include "seapo/util.hpp"

namespace seapo {

namespace {

using nlohmann::json;

std::string_view role_name(Role role) {
    switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    }
    return "user";
}

std::optional<std::string> between(const std::string& text,
                                   std::string_view after,
                                   std::string_view before) {
    size_t i = text.find(after);
    if (i == std::string::npos) {
        return std::nullopt;
    }
    i += after.size();
    const size_t j = text.find(before, i);
    if (j == std::string::npos) {
        return std::nullopt;
    }
    return text.substr(i, j - i);
}

class AuditLog {
public:
    explicit AuditLog(std::optional<std::string> path) : path_(std::move(path)) {}

    void record(int attempt, int status, int64_t latency_ms, const std::string& model) {
        if (!path_) {
            return;
        }
        json line = {
            {"ts", iso8601_utc(now_epoch_seconds())},
            {"attempt", attempt},
            {"status", status},
            {"latency_ms", latency_ms},
            {"model", model},
        };
        std::lock_guard<std::mutex> lock(mutex_);
        std::ofstream out(*path_, std::ios::app);
        out << line.dump() << "\n";
    }

private:
    std::optional<std::string> path_;
    std::mutex mutex_;
};

struct InFlightSlot {
    explicit InFlightSlot(InFlightLimiter& limiter) : limiter_(limiter) {
        limiter_.acquire();
    }
    ~InFlightSlot() { limiter_.release(); }
    InFlightSlot(const InFlightSlot&) = delete;
    InFlightSlot& operator=(const InFlightSlot&) = delete;

private:
    InFlightLimiter& limiter_;
};

class ScriptedGateway : public Gateway {
public:
    explicit ScriptedGateway(BackendConfig config)
        : config_(std::move(config)),
          limiter_(config_.max_in_flight),
          audit_(config_.audit_log) {}

    CompletionResult complete(const CompletionRequest& request) override {
        validate(request);
        InFlightSlot slot(limiter_);
        const auto t0 = std::chrono::steady_clock::now();
        std::string text;
        if (*config_.scripted_mode == ScriptedMode::marker) {
            text = marker_reply(request);
        } else {
            std::lock_guard<std::mutex> lock(mutex_);
            if (cursor_ >= config_.script.size()) {
                throw Error(ErrorCode::script_exhausted,
                            "canned script has no reply for this call");
            }
            text = config_.script[cursor_++];
        }
        const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                                 std::chrono::steady_clock::now() - t0)
                                 .count();
        audit_.record(1, 200, latency, request.model);
        return CompletionResult{text, FinishReason::stop, latency, 1};
    }

    std::string name() const override {
        return std::string("scripted/") +
               (*config_.scripted_mode == ScriptedMode::marker ? "marker" : "canned");
    }

private:
    BackendConfig config_;
    InFlightLimiter limiter_;
    AuditLog audit_;
    std::mutex mutex_;
    size_t cursor_ = 0;
};

class HttpGateway : public Gateway {
public:
    explicit HttpGateway(BackendConfig config)
        : config_(std::move(config)),
          limiter_(config_.max_in_flight),
          audit_(config_.audit_log),
          jitter_(std::random_device{}()) {
        base_url_ = *config_.base_url;
        while (!base_url_.empty() && base_url_.back() == '/') {
            base_url_.pop_back();
        }
    }

    CompletionResult complete(const CompletionRequest& request) override {
        validate(request);
        const char* key = std::getenv(config_.api_key_env.c_str());
        if (key == nullptr || *key == '\0') {
            throw Error(ErrorCode::missing_credential,
                        "environment variable " + config_.api_key_env + " is not set");
        }

        InFlightSlot slot(limiter_);
        const auto t0 = std::chrono::steady_clock::now();
        int last_status = 0;
        bool last_was_timeout = false;

        for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
            if (attempt > 1) {
                std::this_thread::sleep_for(
                    std::chrono::milliseconds(jittered_delay_ms(attempt - 1)));
            }

            const auto attempt_t0 = std::chrono::steady_clock::now();
            httplib::Client client(base_url_);
            client.set_connection_timeout(std::chrono::milliseconds(config_.timeout_ms));
            client.set_read_timeout(std::chrono::milliseconds(config_.timeout_ms));
            client.set_write_timeout(std::chrono::milliseconds(config_.timeout_ms));
            client.set_bearer_token_auth(key);

            json body = {
                {"model", request.model},
                {"messages", json::array()},
                {"temperature", request.temperature},
                {"max_tokens", request.max_tokens},
            };
            if (request.seed) {
                body["seed"] = *request.seed;
            }
            for (const Message& m : request.messages) {
                body["messages"].push_back(
                    {{"role", role_name(m.role)}, {"content", m.content}});
            }

            auto res = client.Post("/v1/chat/completions", body.dump(),
                                   "application/json");
            const auto attempt_ms =
                std::chrono::duration_cast<std::chrono::milliseconds>(
                    std::chrono::steady_clock::now() - attempt_t0)
                    .count();

            if (!res) {
                last_status = 0;
                last_was_timeout = res.error() == httplib::Error::ConnectionTimeout;
                audit_.record(attempt, 0, attempt_ms, request.model);
                continue;
            }

            audit_.record(attempt, res->status, attempt_ms, request.model);
            if (res->status == 200) {
                return parse_success(res->body, attempt, t0);
            }
            last_status = res->status;
            last_was_timeout = false;
            if (res->status != 429 && res->status < 500) {
                throw Error(ErrorCode::backend_exhausted,
                            "non-retryable status " + std::to_string(res->status));
            }
        }

        if (last_was_timeout) {
            throw Error(ErrorCode::timeout,
                        "request timed out after " +
                            std::to_string(config_.max_attempts) + " attempts");
        }
        throw Error(ErrorCode::backend_exhausted,
                    "gave up after " + std::to_string(config_.max_attempts) +
                        " attempts, last status " + std::to_string(last_status));
    }

    std::string name() const override { return "http"; }

private:
    CompletionResult parse_success(const std::string& body, int attempts,
                                   std::chrono::steady_clock::time_point t0) {
        json doc = json::parse(body, nullptr, false);
        if (doc.is_discarded() || !doc.contains("choices") || !doc["choices"].is_array() ||
            doc["choices"].empty() || !doc["choices"][0].contains("message") ||
            !doc["choices"][0]["message"].contains("content") ||
            !doc["choices"][0]["message"]["content"].is_string()) {
            throw Error(ErrorCode::malformed_response,
                        "payload lacks choices[0].message.content");
        }
        CompletionResult result;
        result.text = doc["choices"][0]["message"]["content"].get<std::string>();
        result.attempts = attempts;
        result.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
        const std::string reason =
            doc["choices"][0].value("finish_reason", std::string("stop"));
        result.finish_reason = reason == "stop"     ? FinishReason::stop
                               : reason == "length" ? FinishReason::length
                                                    : FinishReason::other;
        return result;
    }

    // Full jitter: uniform in [0, backoff_base * factor^(attempt-1)].
    int64_t jittered_delay_ms(int failed_attempts) {
        const double cap = static_cast<double>(config_.backoff_base_ms) *
                           std::pow(config_.backoff_factor, failed_attempts - 1);
        std::lock_guard<std::mutex> lock(jitter_mutex_);
        std::uniform_real_distribution<double> dist(0.0, cap);
        return static_cast<int64_t>(dist(jitter_));
    }

    BackendConfig config_;
    std::string base_url_;
    InFlightLimiter limiter_;
    AuditLog audit_;
    std::mt19937_64 jitter_;
    std::mutex jitter_mutex_;
};

} // namespace

void validate(const BackendConfig& config) {
    if (config.kind == BackendKind::http && !config.base_url) {
        throw Error(ErrorCode::invalid_argument, "http backend requires base_url");
    }
    if (config.kind == BackendKind::scripted && !config.scripted_mode) {
        throw Error(ErrorCode::invalid_argument,
                    "scripted backend requires scripted_mode");
    }
    if (config.max_attempts < 1) {
        throw Error(ErrorCode::invalid_argument, "max_attempts must be positive");
    }
    if (config.backoff_factor <= 1.0) {
        throw Error(ErrorCode::invalid_argument, "backoff_factor must exceed 1");
    }
    if (config.max_in_flight < 1) {
        throw Error(ErrorCode::invalid_argument, "max_in_flight must be positive");
    }
}

void validate(const CompletionRequest& request) {
    if (request.messages.empty()) {
        throw Error(ErrorCode::invalid_argument, "request has no messages");
    }
    if (request.messages.back().role != Role::user) {
        throw Error(ErrorCode::invalid_argument, "final message must be from the user");
    }
    if (request.temperature < 0.0) {
        throw Error(ErrorCode::invalid_argument, "temperature must be >= 0");
    }
    if (request.max_tokens < 1) {
        throw Error(ErrorCode::invalid_argument, "max_tokens must be positive");
    }
}

std::string marker_reply(const CompletionRequest& request) {
    validate(request);
    const std::string& prompt = request.messages.back().content;

    if (prompt.find("error severity level") != std::string::npos) {
        auto original = between(prompt, "2. **Original Response**: ",
                                "\n3. **Severity Level**: ");
        auto level =
            between(prompt, "3. **Severity Level**: ", "\n4. **Severity Description**: ");
        if (!original || !level) {
            throw Error(ErrorCode::unrecognized_prompt,
                        "severity prompt fields not found");
        }
        return *original + " [SEV:" + *level + "]";
    }
    if (prompt.find("### Revised response:") != std::string::npos) {
        auto original =
            between(prompt, "2. **Original Response**: ", "\n3. **Error Type**: ");
        auto type = between(prompt, "3. **Error Type**: ", "\n4. **Error Description**: ");
        if (!original || !type) {
            throw Error(ErrorCode::unrecognized_prompt,
                        "injection prompt fields not found");
        }
        return *original + " [ERR:" + *type + "]";
    }
    if (prompt.find("respond with \"yes\"") != std::string::npos) {
        auto answer = between(prompt, "Answer: \"", "\"\nError Type: \"");
        auto type = between(prompt, "Error Type: \"", "\"\nError Description: \"");
        if (!answer || !type) {
            throw Error(ErrorCode::unrecognized_prompt,
                        "detection prompt fields not found");
        }
        return answer->find("[ERR:" + *type + "]") != std::string::npos ? "yes" : "no";
    }
    if (prompt.find("COMPLETELY IGNORING factual errors") != std::string::npos) {
        auto answer = between(prompt, "\nAnswer: ", "\n\n## Output Format:");
        if (!answer) {
            throw Error(ErrorCode::unrecognized_prompt, "scoring prompt fields not found");
        }
        return answer->find("[ERR:") != std::string::npos ? "4" : "7";
    }
    if (prompt.find("Strictly ONE of these options") != std::string::npos) {
        auto a = between(prompt, "Answer A: ", "\nAnswer B: ");
        auto b = between(prompt, "\nAnswer B: ", "\n\n## Output:");
        if (!a || !b) {
            throw Error(ErrorCode::unrecognized_prompt,
                        "comparison prompt fields not found");
        }
        const bool a_marked = a->find("[ERR:") != std::string::npos;
        const bool b_marked = b->find("[ERR:") != std::string::npos;
        if (!a_marked && b_marked) {
            return "A";
        }
        if (a_marked && !b_marked) {
            return "B";
        }
        return "tie";
    }
    throw Error(ErrorCode::unrecognized_prompt, "no template sentinel matched");
}

InFlightLimiter::InFlightLimiter(int max_in_flight) : available_(max_in_flight) {}

void InFlightLimiter::acquire() {
    std::unique_lock<std::mutex> lock(mutex_);
    cv_.wait(lock, [this] { return available_ > 0; });
    --available_;
}

void InFlightLimiter::release() {
    {
        std::lock_guard<std::mutex> lock(mutex_);
        ++available_;
    }
    cv_.notify_one();
}

std::unique_ptr<Gateway> make_gateway(const BackendConfig& config) {
    validate(config);
    if (config.kind == BackendKind::scripted) {
        return std::make_unique<ScriptedGateway>(config);
    }
    return std::make_unique<HttpGateway>(config);
}

} // namespace seapo
