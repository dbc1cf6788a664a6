#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "seapo/error.hpp"
#include "seapo/gateway.hpp"
#include "seapo/taxonomy.hpp"

namespace seapo {

// One prompt with its positive answer. The original candidate negatives
// are carried through untouched so the random-original-negative baseline
// can be assembled from the same corpus.
struct SourceRecord {
    std::string id;
    std::string prompt;
    std::string chosen;
    std::vector<std::string> rejected;
    nlohmann::json meta;  // free-form; null when absent
    nlohmann::json extra; // unknown input fields, preserved on read, dropped on write
};

struct InjectedRecord {
    std::string id;
    std::string source_id;
    std::string prompt;
    std::string original;
    std::string injected;
    ErrorSpec spec;
    int attempts = 1;
    std::string backend;
    std::string created_at;
    nlohmann::json extra;
};

struct InjectorOptions {
    std::string model = "seapo-dev";
    double temperature = 0.7;
    int max_tokens = 2048;
    // Additional submissions after an unchanged or empty reply (2 means
    // 3 total attempts).
    int max_retries = 2;
    // Epoch seconds recorded as created_at; real clock when unset. Pinned
    // for scripted runs so batches are byte-reproducible.
    std::optional<int64_t> fixed_timestamp;
};

// Rewrites the source's chosen answer so that it carries the spec's error,
// by rendering the matching template and submitting it through the gateway.
// Replies are whitespace-trimmed; unchanged or empty replies are resubmitted
// up to max_retries times. Throws InjectionNoChange / InjectionEmpty after
// exhaustion, or propagates gateway errors.
InjectedRecord inject(Gateway& gateway, const SourceRecord& source,
                      const ErrorSpec& spec, const InjectorOptions& options = {});

struct InjectionFailure {
    std::string source_id;
    ErrorSpec spec;
    ErrorCode code;
    std::string message;
};

struct SpecTally {
    int64_t succeeded = 0;
    int64_t failed = 0;
};

struct BatchResult {
    // Ordered by (source index, spec index) regardless of completion order.
    std::vector<InjectedRecord> records;
    std::vector<InjectionFailure> failures;
    std::map<ErrorSpec, SpecTally> per_spec;
};

// Injects every (source, spec) pair in the cross product with at most
// `concurrency` gateway calls outstanding. Failures are collected per pair
// and never abort the batch.
BatchResult run_batch(Gateway& gateway, const std::vector<SourceRecord>& sources,
                      const std::vector<ErrorSpec>& plan, int concurrency,
                      const InjectorOptions& options = {});

// JSONL schemas:
//   source:   {"id","prompt","chosen","rejected"?,"meta"?}
//   injected: {"id","source_id","prompt","original","injected","error_type",
//              "severity","attempts","backend","created_at"}  (severity null
//              when absent)
// Unknown fields are preserved on read and dropped on write; strict mode
// rejects them with SchemaError.
std::vector<SourceRecord> read_sources(const std::string& path, bool strict = false);
void write_sources(const std::string& path, const std::vector<SourceRecord>& records);
std::vector<InjectedRecord> read_injected(const std::string& path, bool strict = false);
void write_injected(const std::string& path, const std::vector<InjectedRecord>& records);

} // namespace seapo
