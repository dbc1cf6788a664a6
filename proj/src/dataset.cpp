#include "seapo/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "seapo/jsonl.hpp"
#include "seapo/util.hpp"

namespace seapo {

namespace {

using jsonl::json;
using jsonl::ordered_json;

std::string kto_id(const KtoRecord& rec) {
    return hex64(fnv1a64("kto|" + rec.prompt + "\x1f" + rec.completion + "\x1f" +
                         std::string(to_string(rec.label))));
}

std::string dpo_id(const DpoRecord& rec) {
    return hex64(
        fnv1a64("dpo|" + rec.prompt + "\x1f" + rec.chosen + "\x1f" + rec.rejected));
}

// spec -> source id -> injected record.
std::map<ErrorSpec, std::unordered_map<std::string, const InjectedRecord*>>
index_injected(const std::vector<InjectedRecord>& injected) {
    std::map<ErrorSpec, std::unordered_map<std::string, const InjectedRecord*>> index;
    for (const InjectedRecord& rec : injected) {
        index[rec.spec].emplace(rec.source_id, &rec);
    }
    return index;
}

// Assigns each spec its allocated number of distinct sources, consuming at
// most `budget` picks per source overall. Returns per-spec source indices.
std::map<ErrorSpec, std::vector<size_t>> sample_assignment(
    const std::vector<SourceRecord>& sources,
    const std::map<ErrorSpec, std::unordered_map<std::string, const InjectedRecord*>>&
        index,
    const std::map<ErrorSpec, int64_t>& allocation, int budget, Rng& rng) {
    std::vector<int> usage(sources.size(), 0);
    std::map<ErrorSpec, std::vector<size_t>> assignment;
    for (const auto& [spec, need] : allocation) {
        if (need == 0) {
            continue;
        }
        auto by_source = index.find(spec);
        std::vector<size_t> eligible;
        for (size_t i = 0; i < sources.size(); ++i) {
            if (usage[i] < budget && by_source != index.end() &&
                by_source->second.count(sources[i].id)) {
                eligible.push_back(i);
            }
        }
        if (static_cast<int64_t>(eligible.size()) < need) {
            throw Error(ErrorCode::insufficient_injected,
                        "spec " + spec.key() + ": have " +
                            std::to_string(eligible.size()) + ", need " +
                            std::to_string(need));
        }
        rng.shuffle(eligible);
        eligible.resize(static_cast<size_t>(need));
        for (size_t i : eligible) {
            usage[i] += 1;
        }
        assignment.emplace(spec, std::move(eligible));
    }
    return assignment;
}

std::vector<int64_t> sorted_lengths(const std::vector<int64_t>& values) {
    std::vector<int64_t> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    return sorted;
}

int64_t nearest_rank(const std::vector<int64_t>& sorted, double pct) {
    if (sorted.empty()) {
        return 0;
    }
    const auto rank = static_cast<size_t>(
        std::ceil(pct / 100.0 * static_cast<double>(sorted.size())));
    return sorted[std::min(sorted.size() - 1, rank == 0 ? 0 : rank - 1)];
}

void fill_percentiles(DatasetStats& out, const std::vector<int64_t>& lengths) {
    const std::vector<int64_t> sorted = sorted_lengths(lengths);
    out.p25 = nearest_rank(sorted, 25.0);
    out.p50 = nearest_rank(sorted, 50.0);
    out.p75 = nearest_rank(sorted, 75.0);
    out.p95 = nearest_rank(sorted, 95.0);
}

int64_t count_duplicates(const std::vector<std::string>& prompts) {
    std::set<std::string> distinct(prompts.begin(), prompts.end());
    return static_cast<int64_t>(prompts.size()) -
           static_cast<int64_t>(distinct.size());
}

std::optional<ErrorSpec> read_optional_spec(const json& obj, size_t line_no) {
    std::optional<ErrorSpec> spec;
    if (obj.contains("error_type") && !obj["error_type"].is_null()) {
        ErrorSpec s;
        s.type = parse_error_type(jsonl::require_string(obj, "error_type", line_no));
        if (obj.contains("severity") && !obj["severity"].is_null()) {
            s.severity = parse_severity(jsonl::require_string(obj, "severity", line_no));
        }
        spec = s;
    } else if (obj.contains("severity") && !obj["severity"].is_null()) {
        throw Error(ErrorCode::schema, "line " + std::to_string(line_no) +
                                           ": \"severity\" without \"error_type\"");
    }
    return spec;
}

void write_optional_spec(ordered_json& obj, const std::optional<ErrorSpec>& spec) {
    if (spec) {
        obj["error_type"] = std::string(to_string(spec->type));
        if (spec->severity) {
            obj["severity"] = std::string(to_string(*spec->severity));
        }
    }
}

} // namespace

std::string_view to_string(Label label) {
    return label == Label::desirable ? "desirable" : "undesirable";
}

Label parse_label(std::string_view name) {
    if (name == "desirable") {
        return Label::desirable;
    }
    if (name == "undesirable") {
        return Label::undesirable;
    }
    throw Error(ErrorCode::invalid_argument,
                "unknown label \"" + std::string(name) + "\"");
}

MixPlan::MixPlan(std::vector<std::pair<ErrorSpec, double>> weights, uint64_t seed)
    : seed_(seed) {
    if (weights.empty()) {
        throw Error(ErrorCode::invalid_argument, "mix plan has no weights");
    }
    double sum = 0.0;
    for (auto& [spec, w] : weights) {
        validate(spec);
        if (w < 0.0 || !std::isfinite(w)) {
            throw Error(ErrorCode::invalid_argument,
                        "negative or non-finite weight for " + spec.key());
        }
        sum += w;
    }
    if (sum <= 0.0) {
        throw Error(ErrorCode::invalid_argument, "mix plan weights sum to zero");
    }
    std::sort(weights.begin(), weights.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (size_t i = 1; i < weights.size(); ++i) {
        if (weights[i].first == weights[i - 1].first) {
            throw Error(ErrorCode::invalid_argument,
                        "duplicate spec " + weights[i].first.key() + " in plan");
        }
    }
    for (auto& [spec, w] : weights) {
        w /= sum;
    }
    weights_ = std::move(weights);
}

MixPlan MixPlan::parse(std::string_view text, uint64_t seed) {
    std::vector<std::pair<ErrorSpec, double>> weights;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t comma = text.find(',', pos);
        if (comma == std::string_view::npos) {
            comma = text.size();
        }
        const std::string entry = trim(text.substr(pos, comma - pos));
        if (!entry.empty()) {
            const size_t eq = entry.find('=');
            if (eq == std::string::npos) {
                throw Error(ErrorCode::invalid_argument,
                            "plan entry \"" + entry + "\" is not name=weight");
            }
            const ErrorSpec spec = parse_spec_key(trim(entry.substr(0, eq)));
            double weight = 0.0;
            try {
                size_t used = 0;
                weight = std::stod(entry.substr(eq + 1), &used);
                if (trim(entry.substr(eq + 1 + used)) != "") {
                    throw std::invalid_argument("trailing text");
                }
            } catch (const std::exception&) {
                throw Error(ErrorCode::invalid_argument,
                            "plan entry \"" + entry + "\" has a malformed weight");
            }
            weights.emplace_back(spec, weight);
        }
        if (comma == text.size()) {
            break;
        }
        pos = comma + 1;
    }
    return MixPlan(std::move(weights), seed);
}

std::map<ErrorSpec, int64_t> allocate(const MixPlan& plan, int64_t n) {
    if (n < 1) {
        throw Error(ErrorCode::invalid_argument, "allocation size must be positive");
    }
    const auto& weights = plan.weights();
    std::vector<int64_t> base(weights.size(), 0);
    std::vector<double> remainder(weights.size(), 0.0);
    int64_t assigned = 0;
    for (size_t i = 0; i < weights.size(); ++i) {
        const double quota = weights[i].second * static_cast<double>(n);
        base[i] = static_cast<int64_t>(std::floor(quota));
        remainder[i] = quota - static_cast<double>(base[i]);
        assigned += base[i];
    }
    std::vector<size_t> order(weights.size());
    for (size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    // Stable sort keeps the fixed spec ordering on equal remainders.
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return remainder[a] > remainder[b];
    });
    for (size_t i = 0; assigned < n; ++i) {
        base[order[i % order.size()]] += 1;
        assigned += 1;
    }
    std::map<ErrorSpec, int64_t> result;
    for (size_t i = 0; i < weights.size(); ++i) {
        result[weights[i].first] = base[i];
    }
    return result;
}

KtoAssembly assemble_kto(const std::vector<SourceRecord>& sources,
                         const std::vector<InjectedRecord>& injected,
                         const MixPlan& plan, int negatives_per_source) {
    if (sources.empty()) {
        throw Error(ErrorCode::invalid_argument, "assemble_kto requires sources");
    }
    if (negatives_per_source < 1) {
        throw Error(ErrorCode::invalid_argument,
                    "negatives_per_source must be positive");
    }
    const auto index = index_injected(injected);
    const auto allocation =
        allocate(plan, static_cast<int64_t>(sources.size()) * negatives_per_source);
    Rng rng_sample(plan.seed(), "sample");
    const auto assignment =
        sample_assignment(sources, index, allocation, negatives_per_source, rng_sample);

    std::vector<KtoRecord> records;
    for (const SourceRecord& src : sources) {
        KtoRecord rec;
        rec.prompt = src.prompt;
        rec.completion = src.chosen;
        rec.label = Label::desirable;
        rec.source_id = src.id;
        records.push_back(std::move(rec));
    }
    for (const auto& [spec, picks] : assignment) {
        const auto& by_source = index.at(spec);
        for (size_t i : picks) {
            const InjectedRecord* inj = by_source.at(sources[i].id);
            KtoRecord rec;
            rec.prompt = inj->prompt;
            rec.completion = inj->injected;
            rec.label = Label::undesirable;
            rec.spec = spec;
            rec.source_id = inj->source_id;
            records.push_back(std::move(rec));
        }
    }

    KtoAssembly out;
    for (KtoRecord& rec : records) {
        if (rec.completion.empty()) {
            out.dropped.push_back({rec.source_id, "empty completion"});
            continue;
        }
        if (rec.label == Label::desirable && rec.spec) {
            out.dropped.push_back({rec.source_id, "desirable record carries a spec"});
            continue;
        }
        rec.id = kto_id(rec);
        out.records.push_back(std::move(rec));
    }
    Rng rng_shuffle(plan.seed(), "shuffle");
    rng_shuffle.shuffle(out.records);
    return out;
}

KtoAssembly assemble_ron(const std::vector<SourceRecord>& sources, uint64_t seed) {
    if (sources.empty()) {
        throw Error(ErrorCode::invalid_argument, "assemble_ron requires sources");
    }
    Rng rng(seed, "ron");
    KtoAssembly out;
    for (const SourceRecord& src : sources) {
        if (src.rejected.empty()) {
            throw Error(ErrorCode::validation,
                        "source " + src.id + " has no rejected candidates");
        }
        KtoRecord pos;
        pos.prompt = src.prompt;
        pos.completion = src.chosen;
        pos.label = Label::desirable;
        pos.source_id = src.id;
        pos.id = kto_id(pos);
        out.records.push_back(std::move(pos));

        KtoRecord neg;
        neg.prompt = src.prompt;
        neg.completion = src.rejected[rng.bounded(src.rejected.size())];
        neg.label = Label::undesirable;
        neg.source_id = src.id;
        neg.id = kto_id(neg);
        out.records.push_back(std::move(neg));
    }
    Rng rng_shuffle(seed, "shuffle");
    rng_shuffle.shuffle(out.records);
    return out;
}

DpoAssembly assemble_dpo(const std::vector<SourceRecord>& sources,
                         const std::vector<InjectedRecord>& injected,
                         const MixPlan& plan) {
    if (sources.empty()) {
        throw Error(ErrorCode::invalid_argument, "assemble_dpo requires sources");
    }
    const auto index = index_injected(injected);
    const auto allocation = allocate(plan, static_cast<int64_t>(sources.size()));
    Rng rng_sample(plan.seed(), "sample");
    const auto assignment = sample_assignment(sources, index, allocation, 1, rng_sample);

    DpoAssembly out;
    for (const auto& [spec, picks] : assignment) {
        const auto& by_source = index.at(spec);
        for (size_t i : picks) {
            const InjectedRecord* inj = by_source.at(sources[i].id);
            DpoRecord rec;
            rec.prompt = sources[i].prompt;
            rec.chosen = sources[i].chosen;
            rec.rejected = inj->injected;
            rec.spec = spec;
            rec.source_id = sources[i].id;
            if (rec.chosen == rec.rejected) {
                out.dropped.push_back({rec.source_id, "chosen equals rejected"});
                continue;
            }
            rec.id = dpo_id(rec);
            out.records.push_back(std::move(rec));
        }
    }
    Rng rng_shuffle(plan.seed(), "shuffle");
    rng_shuffle.shuffle(out.records);
    return out;
}

DatasetStats stats(const std::vector<KtoRecord>& records) {
    DatasetStats out;
    std::vector<int64_t> lengths;
    std::vector<std::string> prompts;
    for (const KtoRecord& rec : records) {
        out.by_label[std::string(to_string(rec.label))] += 1;
        if (rec.spec) {
            out.by_error_type[std::string(to_string(rec.spec->type))] += 1;
            if (rec.spec->severity) {
                out.by_severity[std::string(to_string(*rec.spec->severity))] += 1;
            }
        }
        lengths.push_back(static_cast<int64_t>(rec.completion.size()));
        prompts.push_back(rec.prompt);
    }
    out.total = static_cast<int64_t>(records.size());
    out.duplicate_prompts = count_duplicates(prompts);
    fill_percentiles(out, lengths);
    return out;
}

DatasetStats stats(const std::vector<DpoRecord>& records) {
    DatasetStats out;
    std::vector<int64_t> lengths;
    std::vector<std::string> prompts;
    for (const DpoRecord& rec : records) {
        out.by_label["chosen"] += 1;
        out.by_label["rejected"] += 1;
        if (rec.spec) {
            out.by_error_type[std::string(to_string(rec.spec->type))] += 1;
            if (rec.spec->severity) {
                out.by_severity[std::string(to_string(*rec.spec->severity))] += 1;
            }
        }
        lengths.push_back(static_cast<int64_t>(rec.chosen.size()));
        lengths.push_back(static_cast<int64_t>(rec.rejected.size()));
        prompts.push_back(rec.prompt);
    }
    out.total = static_cast<int64_t>(records.size());
    out.duplicate_prompts = count_duplicates(prompts);
    fill_percentiles(out, lengths);
    return out;
}

ordered_json to_json(const DatasetStats& stats) {
    return ordered_json{
        {"counts",
         {{"label", stats.by_label},
          {"error_type", stats.by_error_type},
          {"severity", stats.by_severity}}},
        {"length_percentiles",
         {{"p25", stats.p25}, {"p50", stats.p50}, {"p75", stats.p75}, {"p95", stats.p95}}},
        {"duplicate_prompts", stats.duplicate_prompts},
        {"total", stats.total},
    };
}

std::vector<KtoRecord> read_kto(const std::string& path, bool strict) {
    static const std::set<std::string> known = {
        "id", "prompt", "completion", "label", "error_type", "severity", "source_id"};
    std::vector<KtoRecord> out;
    for (const auto& [line_no, obj] : jsonl::read_objects(path)) {
        KtoRecord rec;
        rec.id = jsonl::require_string(obj, "id", line_no);
        rec.prompt = jsonl::require_string(obj, "prompt", line_no);
        rec.completion = jsonl::require_string(obj, "completion", line_no);
        try {
            rec.label = parse_label(jsonl::require_string(obj, "label", line_no));
        } catch (const Error& e) {
            if (e.code() == ErrorCode::invalid_argument) {
                throw Error(ErrorCode::schema,
                            "line " + std::to_string(line_no) + ": " + e.what());
            }
            throw;
        }
        rec.spec = read_optional_spec(obj, line_no);
        rec.source_id = jsonl::require_string(obj, "source_id", line_no);
        if (rec.label == Label::desirable && rec.spec) {
            throw Error(ErrorCode::schema, "line " + std::to_string(line_no) +
                                               ": desirable record carries a spec");
        }
        rec.extra = jsonl::extract_unknown(obj, known, strict, line_no);
        out.push_back(std::move(rec));
    }
    return out;
}

void write_kto(const std::string& path, const std::vector<KtoRecord>& records) {
    std::vector<ordered_json> lines;
    lines.reserve(records.size());
    for (const KtoRecord& rec : records) {
        ordered_json obj;
        obj["id"] = rec.id;
        obj["prompt"] = rec.prompt;
        obj["completion"] = rec.completion;
        obj["label"] = std::string(to_string(rec.label));
        write_optional_spec(obj, rec.spec);
        obj["source_id"] = rec.source_id;
        lines.push_back(std::move(obj));
    }
    jsonl::write_lines(path, lines);
}

std::vector<DpoRecord> read_dpo(const std::string& path, bool strict) {
    static const std::set<std::string> known = {
        "id", "prompt", "chosen", "rejected", "error_type", "severity", "source_id"};
    std::vector<DpoRecord> out;
    for (const auto& [line_no, obj] : jsonl::read_objects(path)) {
        DpoRecord rec;
        rec.id = jsonl::require_string(obj, "id", line_no);
        rec.prompt = jsonl::require_string(obj, "prompt", line_no);
        rec.chosen = jsonl::require_string(obj, "chosen", line_no);
        rec.rejected = jsonl::require_string(obj, "rejected", line_no);
        rec.spec = read_optional_spec(obj, line_no);
        rec.source_id = jsonl::require_string(obj, "source_id", line_no);
        if (rec.chosen == rec.rejected) {
            throw Error(ErrorCode::schema, "line " + std::to_string(line_no) +
                                               ": chosen equals rejected");
        }
        rec.extra = jsonl::extract_unknown(obj, known, strict, line_no);
        out.push_back(std::move(rec));
    }
    return out;
}

void write_dpo(const std::string& path, const std::vector<DpoRecord>& records) {
    std::vector<ordered_json> lines;
    lines.reserve(records.size());
    for (const DpoRecord& rec : records) {
        ordered_json obj;
        obj["id"] = rec.id;
        obj["prompt"] = rec.prompt;
        obj["chosen"] = rec.chosen;
        obj["rejected"] = rec.rejected;
        write_optional_spec(obj, rec.spec);
        obj["source_id"] = rec.source_id;
        lines.push_back(std::move(obj));
    }
    jsonl::write_lines(path, lines);
}

} // namespace seapo
