#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "seapo/injector.hpp"
#include "seapo/rng.hpp"
#include "seapo/taxonomy.hpp"

namespace seapo {

enum class Label { desirable, undesirable };

std::string_view to_string(Label label);
Label parse_label(std::string_view name);

struct KtoRecord {
    std::string id;
    std::string prompt;
    std::string completion;
    Label label = Label::desirable;
    // Present for injected negatives; absent for positives and for negatives
    // drawn from a source's original rejected candidates.
    std::optional<ErrorSpec> spec;
    std::string source_id;
    nlohmann::json extra;
};

struct DpoRecord {
    std::string id;
    std::string prompt;
    std::string chosen;
    std::string rejected;
    std::optional<ErrorSpec> spec;
    std::string source_id;
    nlohmann::json extra;
};

// Non-negative weights over error specs, normalized on construction.
class MixPlan {
public:
    MixPlan(std::vector<std::pair<ErrorSpec, double>> weights, uint64_t seed);

    // Parses "logic=0.5,hallucination=0.5" with optional "@severity"
    // suffixes ("correctness@major=1.0").
    static MixPlan parse(std::string_view text, uint64_t seed);

    // Normalized, sorted by the fixed spec ordering.
    const std::vector<std::pair<ErrorSpec, double>>& weights() const {
        return weights_;
    }
    uint64_t seed() const { return seed_; }

private:
    std::vector<std::pair<ErrorSpec, double>> weights_;
    uint64_t seed_ = 0;
};

// Integer apportionment of n across the plan's specs by largest remainder;
// remainder ties break toward the fixed spec ordering. Sums to n.
std::map<ErrorSpec, int64_t> allocate(const MixPlan& plan, int64_t n);

struct DroppedRecord {
    std::string source_id;
    std::string reason;
};

struct KtoAssembly {
    std::vector<KtoRecord> records;
    std::vector<DroppedRecord> dropped;
};

struct DpoAssembly {
    std::vector<DpoRecord> records;
    std::vector<DroppedRecord> dropped;
};

// One desirable record per source plus negatives_per_source injected
// negatives allocated across the plan's specs; sources are sampled without
// replacement per spec with a generator seeded from plan.seed, and the
// output order is a seeded shuffle. Ids are content-addressed. Throws
// InsufficientInjected when a spec's allocation cannot be filled.
KtoAssembly assemble_kto(const std::vector<SourceRecord>& sources,
                         const std::vector<InjectedRecord>& injected,
                         const MixPlan& plan, int negatives_per_source = 1);

// Baseline assembly: one desirable record per source plus one undesirable
// drawn uniformly from the source's original rejected candidates (spec
// absent). Sources without rejected candidates raise ValidationError.
KtoAssembly assemble_ron(const std::vector<SourceRecord>& sources, uint64_t seed);

// Pairs each source's chosen answer with one allocated injected negative.
// Pairs whose rejected side equals the chosen side are dropped and reported.
DpoAssembly assemble_dpo(const std::vector<SourceRecord>& sources,
                         const std::vector<InjectedRecord>& injected,
                         const MixPlan& plan);

struct DatasetStats {
    std::map<std::string, int64_t> by_label;
    std::map<std::string, int64_t> by_error_type;
    std::map<std::string, int64_t> by_severity;
    // Nearest-rank percentiles of completion length in bytes.
    int64_t p25 = 0, p50 = 0, p75 = 0, p95 = 0;
    int64_t duplicate_prompts = 0; // records minus distinct prompts
    int64_t total = 0;
};

DatasetStats stats(const std::vector<KtoRecord>& records);
DatasetStats stats(const std::vector<DpoRecord>& records);
nlohmann::ordered_json to_json(const DatasetStats& stats);

// JSONL schemas (optional fields omitted when absent):
//   KTO: {"id","prompt","completion","label","error_type"?,"severity"?,"source_id"}
//   DPO: {"id","prompt","chosen","rejected","error_type"?,"severity"?,"source_id"}
std::vector<KtoRecord> read_kto(const std::string& path, bool strict = false);
void write_kto(const std::string& path, const std::vector<KtoRecord>& records);
std::vector<DpoRecord> read_dpo(const std::string& path, bool strict = false);
void write_dpo(const std::string& path, const std::vector<DpoRecord>& records);

// Seeded ratio split; the second part holds round(holdout_ratio * n) records.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> split(const std::vector<T>& records,
                                                double holdout_ratio, uint64_t seed) {
    std::vector<size_t> order(records.size());
    for (size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    Rng rng(seed, "split");
    rng.shuffle(order);
    const auto holdout = static_cast<size_t>(
        static_cast<double>(records.size()) * holdout_ratio + 0.5);
    std::pair<std::vector<T>, std::vector<T>> out;
    for (size_t i = 0; i < order.size(); ++i) {
        (i < records.size() - holdout ? out.first : out.second)
            .push_back(records[order[i]]);
    }
    return out;
}

} // namespace seapo
