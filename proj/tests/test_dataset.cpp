#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "seapo/dataset.hpp"
#include "seapo/util.hpp"

using namespace seapo;

namespace {

const ErrorSpec kLogic{ErrorType::logic, std::nullopt};
const ErrorSpec kCorrectness{ErrorType::correctness, std::nullopt};
const ErrorSpec kHallucination{ErrorType::hallucination, std::nullopt};

SourceRecord source(const std::string& id, std::vector<std::string> rejected = {}) {
    SourceRecord rec;
    rec.id = id;
    rec.prompt = "prompt-" + id;
    rec.chosen = "chosen-" + id;
    rec.rejected = std::move(rejected);
    return rec;
}

InjectedRecord injected_for(const SourceRecord& src, const ErrorSpec& spec) {
    InjectedRecord rec;
    rec.id = src.id + "/" + spec.key();
    rec.source_id = src.id;
    rec.prompt = src.prompt;
    rec.original = src.chosen;
    rec.injected = src.chosen + " [" + spec.key() + "]";
    rec.spec = spec;
    rec.backend = "scripted/marker";
    rec.created_at = "1970-01-01T00:00:00Z";
    return rec;
}

struct Corpus {
    std::vector<SourceRecord> sources;
    std::vector<InjectedRecord> injected;
};

Corpus full_corpus(int n, const std::vector<ErrorSpec>& specs) {
    Corpus c;
    for (int i = 0; i < n; ++i) {
        c.sources.push_back(source("s" + std::to_string(i)));
        for (const ErrorSpec& spec : specs) {
            c.injected.push_back(injected_for(c.sources.back(), spec));
        }
    }
    return c;
}

std::map<ErrorType, int> undesirable_type_counts(const std::vector<KtoRecord>& records) {
    std::map<ErrorType, int> counts;
    for (const KtoRecord& rec : records) {
        if (rec.label == Label::undesirable && rec.spec) {
            counts[rec.spec->type] += 1;
        }
    }
    return counts;
}

std::string file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

} // namespace

TEST_CASE("allocate handles the degenerate single-spec plan") {
    const MixPlan plan({{kLogic, 1.0}}, 0);
    const auto alloc = allocate(plan, 10);
    CHECK(alloc.at(kLogic) == 10);
}

TEST_CASE("allocate splits an even two-way plan evenly") {
    const MixPlan plan({{kLogic, 0.5}, {kHallucination, 0.5}}, 0);
    const auto alloc = allocate(plan, 10);
    CHECK(alloc.at(kLogic) == 5);
    CHECK(alloc.at(kHallucination) == 5);
}

TEST_CASE("allocate breaks equal-remainder ties toward the fixed ordering") {
    // Largest remainder with thirds of 10: quotas 3.33.. each, one leftover
    // seat, and the tie goes to logic as the first spec in the order.
    const MixPlan plan({{kCorrectness, 1.0}, {kLogic, 1.0}, {kHallucination, 1.0}}, 0);
    const auto alloc = allocate(plan, 10);
    CHECK(alloc.at(kLogic) == 4);
    CHECK(alloc.at(kCorrectness) == 3);
    CHECK(alloc.at(kHallucination) == 3);
}

TEST_CASE("allocate always sums to n") {
    Rng rng(2026);
    const std::vector<ErrorSpec> pool = {
        kLogic,
        kCorrectness,
        kHallucination,
        {ErrorType::untargeted, std::nullopt},
        {ErrorType::multi, std::nullopt},
        {ErrorType::logic, Severity::major},
        {ErrorType::correctness, Severity::minor},
    };
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<std::pair<ErrorSpec, double>> weights;
        std::vector<size_t> picks;
        const size_t count = 1 + rng.bounded(pool.size());
        for (size_t i = 0; i < pool.size() && weights.size() < count; ++i) {
            weights.emplace_back(pool[i], rng.uniform(0.0, 10.0));
        }
        weights[rng.bounded(weights.size())].second += 0.5; // keep the sum positive
        const MixPlan plan(weights, 0);
        const int64_t n = 1 + static_cast<int64_t>(rng.bounded(500));
        int64_t total = 0;
        for (const auto& [spec, k] : allocate(plan, n)) {
            CHECK(k >= 0);
            total += k;
        }
        CHECK(total == n);
    }
}

TEST_CASE("plan parsing supports severity suffixes and rejects junk") {
    const MixPlan plan = MixPlan::parse("logic=0.5, correctness@major=0.25,multi=0.25", 7);
    REQUIRE(plan.weights().size() == 3);
    CHECK(plan.weights()[0].first == kLogic);
    CHECK(plan.weights()[1].first == ErrorSpec{ErrorType::correctness, Severity::major});
    CHECK(plan.weights()[2].first == ErrorSpec{ErrorType::multi, std::nullopt});
    CHECK(plan.weights()[0].second == doctest::Approx(0.5));
    CHECK(plan.seed() == 7);

    CHECK_THROWS_AS(MixPlan::parse("logic", 0), Error);
    CHECK_THROWS_AS(MixPlan::parse("logic=x", 0), Error);
    CHECK_THROWS_AS(MixPlan::parse("bogus=1.0", 0), Error);
    CHECK_THROWS_AS(MixPlan::parse("", 0), Error);
    CHECK_THROWS_AS(MixPlan::parse("logic=0.0", 0), Error);
    CHECK_THROWS_AS(MixPlan::parse("multi@major=1.0", 0), Error);
}

TEST_CASE("assemble_kto emits one positive per source and allocated negatives") {
    const Corpus corpus = full_corpus(10, {kLogic});
    const MixPlan plan({{kLogic, 1.0}}, 42);
    const KtoAssembly out = assemble_kto(corpus.sources, corpus.injected, plan);
    CHECK(out.dropped.empty());
    REQUIRE(out.records.size() == 20);

    int desirable = 0, undesirable = 0;
    for (const KtoRecord& rec : out.records) {
        if (rec.label == Label::desirable) {
            desirable += 1;
            CHECK_FALSE(rec.spec.has_value());
        } else {
            undesirable += 1;
            REQUIRE(rec.spec.has_value());
            CHECK(rec.spec->type == ErrorType::logic);
        }
        CHECK(rec.id.size() == 16);
    }
    CHECK(desirable == 10);
    CHECK(undesirable == 10);
}

TEST_CASE("assemble_kto undesirable counts follow the allocation") {
    const Corpus corpus =
        full_corpus(10, {kLogic, kCorrectness, kHallucination});
    const MixPlan plan(
        {{kLogic, 1.0}, {kCorrectness, 1.0}, {kHallucination, 1.0}}, 1234);
    const KtoAssembly out = assemble_kto(corpus.sources, corpus.injected, plan);
    const auto counts = undesirable_type_counts(out.records);
    CHECK(counts.at(ErrorType::logic) == 4);
    CHECK(counts.at(ErrorType::correctness) == 3);
    CHECK(counts.at(ErrorType::hallucination) == 3);
}

TEST_CASE("assemble_kto samples each source at most once per spec") {
    const Corpus corpus = full_corpus(12, {kLogic, kHallucination});
    const MixPlan plan({{kLogic, 0.5}, {kHallucination, 0.5}}, 5);
    const KtoAssembly out =
        assemble_kto(corpus.sources, corpus.injected, plan, /*negatives_per_source=*/2);
    std::map<std::pair<std::string, std::string>, int> seen;
    int undesirable = 0;
    for (const KtoRecord& rec : out.records) {
        if (rec.label == Label::undesirable) {
            undesirable += 1;
            seen[{rec.source_id, rec.spec->key()}] += 1;
        }
    }
    CHECK(undesirable == 24);
    for (const auto& [key, n] : seen) {
        CHECK(n == 1);
    }
}

TEST_CASE("assemble_kto raises InsufficientInjected when records are missing") {
    Corpus corpus = full_corpus(10, {kLogic});
    corpus.injected.resize(4); // only four logic rewrites exist
    const MixPlan plan({{kLogic, 1.0}}, 42);
    try {
        assemble_kto(corpus.sources, corpus.injected, plan);
        FAIL("expected InsufficientInjected");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::insufficient_injected);
        CHECK(std::string(e.what()).find("have 4, need 10") != std::string::npos);
    }
}

TEST_CASE("ron assembly draws spec-free negatives from original rejects") {
    std::vector<SourceRecord> sources;
    for (int i = 0; i < 10; ++i) {
        sources.push_back(source("s" + std::to_string(i),
                                 {"bad1-" + std::to_string(i),
                                  "bad2-" + std::to_string(i),
                                  "bad3-" + std::to_string(i)}));
    }
    const KtoAssembly out = assemble_ron(sources, 42);
    REQUIRE(out.records.size() == 20);
    for (const KtoRecord& rec : out.records) {
        if (rec.label == Label::undesirable) {
            CHECK_FALSE(rec.spec.has_value());
            CHECK(rec.completion.rfind("bad", 0) == 0);
        }
    }

    sources.push_back(source("no-rejects"));
    CHECK_THROWS_AS(assemble_ron(sources, 42), Error);
}

TEST_CASE("assembly is byte-deterministic for a fixed seed") {
    const Corpus corpus = full_corpus(25, {kLogic, kHallucination});
    const MixPlan plan({{kLogic, 0.7}, {kHallucination, 0.3}}, 77);
    const auto a = temp_file("seapo_kto_a.jsonl");
    const auto b = temp_file("seapo_kto_b.jsonl");
    write_kto(a.string(), assemble_kto(corpus.sources, corpus.injected, plan).records);
    write_kto(b.string(), assemble_kto(corpus.sources, corpus.injected, plan).records);
    CHECK(file_bytes(a) == file_bytes(b));

    // A different seed rearranges the dataset.
    const MixPlan other({{kLogic, 0.7}, {kHallucination, 0.3}}, 78);
    write_kto(b.string(), assemble_kto(corpus.sources, corpus.injected, other).records);
    CHECK(file_bytes(a) != file_bytes(b));
    std::filesystem::remove(a);
    std::filesystem::remove(b);
}

TEST_CASE("assemble_dpo pairs every source with one allocated negative") {
    const Corpus corpus = full_corpus(10, {kHallucination});
    const MixPlan plan({{kHallucination, 1.0}}, 42);
    const DpoAssembly out = assemble_dpo(corpus.sources, corpus.injected, plan);
    CHECK(out.dropped.empty());
    REQUIRE(out.records.size() == 10);
    for (const DpoRecord& rec : out.records) {
        CHECK(rec.chosen != rec.rejected);
        REQUIRE(rec.spec.has_value());
        CHECK(rec.spec->type == ErrorType::hallucination);
    }
}

TEST_CASE("assemble_dpo drops pairs whose sides are identical") {
    Corpus corpus = full_corpus(5, {kLogic});
    corpus.injected[2].injected = corpus.sources[2].chosen; // upstream check bypassed
    const MixPlan plan({{kLogic, 1.0}}, 42);
    const DpoAssembly out = assemble_dpo(corpus.sources, corpus.injected, plan);
    CHECK(out.records.size() == 4);
    REQUIRE(out.dropped.size() == 1);
    CHECK(out.dropped[0].source_id == "s2");
}

TEST_CASE("assemble_dpo mixed plan splits fifty-fifty over 100 sources") {
    const Corpus corpus = full_corpus(100, {kLogic, kHallucination});
    const MixPlan plan({{kLogic, 0.5}, {kHallucination, 0.5}}, 9);
    const DpoAssembly out = assemble_dpo(corpus.sources, corpus.injected, plan);
    REQUIRE(out.records.size() == 100);
    std::map<ErrorType, int> counts;
    for (const DpoRecord& rec : out.records) {
        counts[rec.spec->type] += 1;
    }
    CHECK(counts[ErrorType::logic] == 50);
    CHECK(counts[ErrorType::hallucination] == 50);
}

TEST_CASE("kto records survive a JSONL round trip") {
    Rng rng(31337);
    auto random_text = [&](const char* prefix) {
        std::string s(prefix);
        const size_t len = 1 + rng.bounded(30);
        for (size_t i = 0; i < len; ++i) {
            s.push_back(static_cast<char>('a' + rng.bounded(26)));
            if (rng.bounded(6) == 0) {
                s.push_back(' ');
            }
        }
        return s;
    };
    std::vector<KtoRecord> records;
    for (int i = 0; i < 1000; ++i) {
        KtoRecord rec;
        rec.prompt = random_text("p ");
        rec.completion = random_text("c ");
        rec.label = rng.bounded(2) == 0 ? Label::desirable : Label::undesirable;
        if (rec.label == Label::undesirable && rng.bounded(2) == 0) {
            ErrorSpec spec;
            spec.type = static_cast<ErrorType>(rng.bounded(5));
            if (spec.type != ErrorType::multi && rng.bounded(2) == 0) {
                spec.severity = static_cast<Severity>(rng.bounded(4));
            }
            rec.spec = spec;
        }
        rec.source_id = "src" + std::to_string(rng.bounded(100));
        rec.id = "id" + std::to_string(i);
        records.push_back(std::move(rec));
    }

    const auto path = temp_file("seapo_kto_roundtrip.jsonl");
    write_kto(path.string(), records);
    const auto loaded = read_kto(path.string());
    REQUIRE(loaded.size() == records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        CHECK(loaded[i].id == records[i].id);
        CHECK(loaded[i].prompt == records[i].prompt);
        CHECK(loaded[i].completion == records[i].completion);
        CHECK(loaded[i].label == records[i].label);
        CHECK(loaded[i].spec == records[i].spec);
        CHECK(loaded[i].source_id == records[i].source_id);
    }
    std::filesystem::remove(path);
}

TEST_CASE("dpo records survive a JSONL round trip") {
    Rng rng(555);
    std::vector<DpoRecord> records;
    for (int i = 0; i < 1000; ++i) {
        DpoRecord rec;
        rec.id = "id" + std::to_string(i);
        rec.prompt = "p" + std::to_string(rng.bounded(1000));
        rec.chosen = "good" + std::to_string(i);
        rec.rejected = "bad" + std::to_string(i);
        if (rng.bounded(2) == 0) {
            rec.spec = ErrorSpec{static_cast<ErrorType>(rng.bounded(3)), std::nullopt};
        }
        rec.source_id = "s" + std::to_string(i);
        records.push_back(std::move(rec));
    }
    const auto path = temp_file("seapo_dpo_roundtrip.jsonl");
    write_dpo(path.string(), records);
    const auto loaded = read_dpo(path.string());
    REQUIRE(loaded.size() == records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        CHECK(loaded[i].chosen == records[i].chosen);
        CHECK(loaded[i].rejected == records[i].rejected);
        CHECK(loaded[i].spec == records[i].spec);
    }
    std::filesystem::remove(path);
}

TEST_CASE("readers reject malformed lines with line and field context") {
    const auto path = temp_file("seapo_kto_bad.jsonl");
    {
        std::ofstream out(path);
        out << R"({"id":"a","prompt":"p","completion":"c","label":"desirable","source_id":"s"})"
            << "\n";
        out << R"({"id":"b","completion":"c","label":"desirable","source_id":"s"})"
            << "\n";
    }
    try {
        read_kto(path.string());
        FAIL("expected SchemaError");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::schema);
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        CHECK(std::string(e.what()).find("prompt") != std::string::npos);
    }

    {
        std::ofstream out(path);
        out << R"({"id":"a","prompt":"p","completion":"c","label":"undesirable",)"
            << R"("severity":"major","source_id":"s"})" << "\n";
    }
    CHECK_THROWS_AS(read_kto(path.string()), Error); // severity without error_type

    {
        std::ofstream out(path);
        out << R"({"id":"a","prompt":"p","completion":"c","label":"desirable",)"
            << R"("source_id":"s","surprise":true})" << "\n";
    }
    CHECK_NOTHROW(read_kto(path.string()));
    CHECK_THROWS_AS(read_kto(path.string(), /*strict=*/true), Error);

    std::filesystem::remove(path);
}

TEST_CASE("stats reconcile counts, lengths, and duplicates") {
    std::vector<KtoRecord> records;
    for (int len = 1; len <= 100; ++len) {
        KtoRecord rec;
        rec.id = "id" + std::to_string(len);
        rec.prompt = "prompt-" + std::to_string(len % 50); // every prompt twice
        rec.completion = std::string(static_cast<size_t>(len), 'a');
        rec.label = len % 2 == 0 ? Label::desirable : Label::undesirable;
        if (rec.label == Label::undesirable) {
            rec.spec = ErrorSpec{ErrorType::logic, len % 4 == 1
                                                       ? std::optional<Severity>(Severity::major)
                                                       : std::nullopt};
        }
        rec.source_id = "s";
        records.push_back(std::move(rec));
    }
    const DatasetStats s = stats(records);
    CHECK(s.total == 100);
    CHECK(s.by_label.at("desirable") == 50);
    CHECK(s.by_label.at("undesirable") == 50);
    CHECK(s.by_error_type.at("logic") == 50);
    CHECK(s.by_severity.at("major") == 25);
    CHECK(s.p25 == 25);
    CHECK(s.p50 == 50);
    CHECK(s.p75 == 75);
    CHECK(s.p95 == 95);
    CHECK(s.duplicate_prompts == 50);

    const auto j = to_json(s);
    CHECK(j["counts"]["label"]["desirable"] == 50);
    CHECK(j["length_percentiles"]["p95"] == 95);
    CHECK(j["total"] == 100);
}

TEST_CASE("seeded split is deterministic and sized by the ratio") {
    std::vector<KtoRecord> records;
    for (int i = 0; i < 100; ++i) {
        KtoRecord rec;
        rec.id = "id" + std::to_string(i);
        rec.prompt = "p";
        rec.completion = "c" + std::to_string(i);
        rec.label = Label::desirable;
        rec.source_id = "s";
        records.push_back(std::move(rec));
    }
    const auto [train_a, val_a] = split(records, 0.2, 42);
    const auto [train_b, val_b] = split(records, 0.2, 42);
    CHECK(train_a.size() == 80);
    CHECK(val_a.size() == 20);
    REQUIRE(train_b.size() == train_a.size());
    for (size_t i = 0; i < train_a.size(); ++i) {
        CHECK(train_a[i].id == train_b[i].id);
    }
}
