#include "seapo/injector.hpp"

#include <atomic>
#include <set>
#include <thread>

#include "seapo/jsonl.hpp"
#include "seapo/rng.hpp"
#include "seapo/util.hpp"

namespace seapo {

namespace {

using jsonl::json;
using jsonl::ordered_json;

std::string injected_id(const std::string& source_id, const ErrorSpec& spec,
                        const std::string& injected) {
    return hex64(fnv1a64("inj|" + source_id + "\x1f" + spec.key() + "\x1f" + injected));
}

} // namespace

InjectedRecord inject(Gateway& gateway, const SourceRecord& source,
                      const ErrorSpec& spec, const InjectorOptions& options) {
    validate(spec);
    const PromptTemplate& tmpl = template_for(spec);
    const std::string rendered =
        render(tmpl, injection_bindings(spec, source.prompt, source.chosen));

    CompletionRequest request;
    request.model = options.model;
    request.messages = {{Role::user, rendered}};
    request.temperature = options.temperature;
    request.max_tokens = options.max_tokens;

    const std::string original = trim(source.chosen);
    const int total_attempts = 1 + options.max_retries;
    bool last_empty = false;
    for (int attempt = 1; attempt <= total_attempts; ++attempt) {
        const CompletionResult result = gateway.complete(request);
        const std::string reply = trim(result.text);
        if (reply.empty()) {
            last_empty = true;
            continue;
        }
        if (reply == original) {
            last_empty = false;
            continue;
        }
        InjectedRecord record;
        record.source_id = source.id;
        record.prompt = source.prompt;
        record.original = source.chosen;
        record.injected = reply;
        record.spec = spec;
        record.attempts = attempt;
        record.backend = gateway.name();
        record.created_at =
            iso8601_utc(options.fixed_timestamp.value_or(now_epoch_seconds()));
        record.id = injected_id(record.source_id, spec, record.injected);
        return record;
    }
    if (last_empty) {
        throw Error(ErrorCode::injection_empty,
                    "empty rewrite for source " + source.id + " after " +
                        std::to_string(total_attempts) + " attempts");
    }
    throw Error(ErrorCode::injection_no_change,
                "rewrite equals the original for source " + source.id + " after " +
                    std::to_string(total_attempts) + " attempts");
}

BatchResult run_batch(Gateway& gateway, const std::vector<SourceRecord>& sources,
                      const std::vector<ErrorSpec>& plan, int concurrency,
                      const InjectorOptions& options) {
    if (sources.empty()) {
        throw Error(ErrorCode::invalid_argument, "run_batch requires sources");
    }
    if (plan.empty()) {
        throw Error(ErrorCode::invalid_argument, "run_batch requires a plan");
    }
    if (concurrency < 1) {
        throw Error(ErrorCode::invalid_argument, "concurrency must be positive");
    }

    const size_t jobs = sources.size() * plan.size();
    std::vector<std::optional<InjectedRecord>> slots(jobs);
    std::vector<std::optional<InjectionFailure>> failures(jobs);
    std::atomic<size_t> next{0};

    auto worker = [&] {
        for (;;) {
            const size_t job = next.fetch_add(1);
            if (job >= jobs) {
                return;
            }
            const SourceRecord& source = sources[job / plan.size()];
            const ErrorSpec& spec = plan[job % plan.size()];
            try {
                slots[job] = inject(gateway, source, spec, options);
            } catch (const Error& e) {
                failures[job] = InjectionFailure{source.id, spec, e.code(), e.what()};
            } catch (const std::exception& e) {
                failures[job] =
                    InjectionFailure{source.id, spec, ErrorCode::io, e.what()};
            }
        }
    };

    const size_t threads =
        std::min<size_t>(static_cast<size_t>(concurrency), jobs);
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (size_t i = 0; i < threads; ++i) {
            pool.emplace_back(worker);
        }
        for (auto& t : pool) {
            t.join();
        }
    }

    BatchResult result;
    result.records.reserve(jobs);
    for (size_t job = 0; job < jobs; ++job) {
        const ErrorSpec& spec = plan[job % plan.size()];
        if (slots[job]) {
            result.records.push_back(std::move(*slots[job]));
            result.per_spec[spec].succeeded += 1;
        } else {
            result.failures.push_back(std::move(*failures[job]));
            result.per_spec[spec].failed += 1;
        }
    }
    return result;
}

std::vector<SourceRecord> read_sources(const std::string& path, bool strict) {
    static const std::set<std::string> known = {"id", "prompt", "chosen", "rejected",
                                                "meta"};
    std::vector<SourceRecord> out;
    std::set<std::string> seen_ids;
    for (const auto& [line_no, obj] : jsonl::read_objects(path)) {
        SourceRecord rec;
        rec.id = jsonl::require_string(obj, "id", line_no);
        rec.prompt = jsonl::require_string(obj, "prompt", line_no);
        rec.chosen = jsonl::require_string(obj, "chosen", line_no);
        if (rec.prompt.empty() || rec.chosen.empty()) {
            throw Error(ErrorCode::schema, "line " + std::to_string(line_no) +
                                               ": empty prompt or chosen");
        }
        if (!seen_ids.insert(rec.id).second) {
            throw Error(ErrorCode::schema, "line " + std::to_string(line_no) +
                                               ": duplicate id \"" + rec.id + "\"");
        }
        if (obj.contains("rejected") && !obj["rejected"].is_null()) {
            if (!obj["rejected"].is_array()) {
                throw Error(ErrorCode::schema, "line " + std::to_string(line_no) +
                                                   ": \"rejected\" must be an array");
            }
            for (const auto& item : obj["rejected"]) {
                if (!item.is_string()) {
                    throw Error(ErrorCode::schema,
                                "line " + std::to_string(line_no) +
                                    ": \"rejected\" entries must be strings");
                }
                rec.rejected.push_back(item.get<std::string>());
            }
        }
        if (obj.contains("meta")) {
            rec.meta = obj["meta"];
        }
        rec.extra = jsonl::extract_unknown(obj, known, strict, line_no);
        out.push_back(std::move(rec));
    }
    return out;
}

void write_sources(const std::string& path, const std::vector<SourceRecord>& records) {
    std::vector<ordered_json> lines;
    lines.reserve(records.size());
    for (const SourceRecord& rec : records) {
        ordered_json obj;
        obj["id"] = rec.id;
        obj["prompt"] = rec.prompt;
        obj["chosen"] = rec.chosen;
        if (!rec.rejected.empty()) {
            obj["rejected"] = rec.rejected;
        }
        if (!rec.meta.is_null()) {
            obj["meta"] = rec.meta;
        }
        lines.push_back(std::move(obj));
    }
    jsonl::write_lines(path, lines);
}

std::vector<InjectedRecord> read_injected(const std::string& path, bool strict) {
    static const std::set<std::string> known = {
        "id",       "source_id", "prompt",  "original",  "injected",
        "error_type", "severity", "attempts", "backend", "created_at"};
    std::vector<InjectedRecord> out;
    for (const auto& [line_no, obj] : jsonl::read_objects(path)) {
        InjectedRecord rec;
        rec.id = jsonl::require_string(obj, "id", line_no);
        rec.source_id = jsonl::require_string(obj, "source_id", line_no);
        rec.prompt = jsonl::require_string(obj, "prompt", line_no);
        rec.original = jsonl::require_string(obj, "original", line_no);
        rec.injected = jsonl::require_string(obj, "injected", line_no);
        rec.spec.type =
            parse_error_type(jsonl::require_string(obj, "error_type", line_no));
        auto sev = obj.find("severity");
        if (sev == obj.end()) {
            throw Error(ErrorCode::schema, "line " + std::to_string(line_no) +
                                               ": missing field \"severity\"");
        }
        if (!sev->is_null()) {
            if (!sev->is_string()) {
                throw Error(ErrorCode::schema, "line " + std::to_string(line_no) +
                                                   ": \"severity\" must be a string "
                                                   "or null");
            }
            rec.spec.severity = parse_severity(sev->get<std::string>());
        }
        rec.attempts = static_cast<int>(jsonl::require_int(obj, "attempts", line_no));
        rec.backend = jsonl::require_string(obj, "backend", line_no);
        rec.created_at = jsonl::require_string(obj, "created_at", line_no);
        if (trim(rec.injected) == trim(rec.original)) {
            throw Error(ErrorCode::schema, "line " + std::to_string(line_no) +
                                               ": injected equals original");
        }
        rec.extra = jsonl::extract_unknown(obj, known, strict, line_no);
        out.push_back(std::move(rec));
    }
    return out;
}

void write_injected(const std::string& path,
                    const std::vector<InjectedRecord>& records) {
    std::vector<ordered_json> lines;
    lines.reserve(records.size());
    for (const InjectedRecord& rec : records) {
        ordered_json obj;
        obj["id"] = rec.id;
        obj["source_id"] = rec.source_id;
        obj["prompt"] = rec.prompt;
        obj["original"] = rec.original;
        obj["injected"] = rec.injected;
        obj["error_type"] = std::string(to_string(rec.spec.type));
        obj["severity"] = rec.spec.severity
                              ? ordered_json(std::string(to_string(*rec.spec.severity)))
                              : ordered_json(nullptr);
        obj["attempts"] = rec.attempts;
        obj["backend"] = rec.backend;
        obj["created_at"] = rec.created_at;
        lines.push_back(std::move(obj));
    }
    jsonl::write_lines(path, lines);
}

} // namespace seapo
