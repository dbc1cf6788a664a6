#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "seapo/gateway.hpp"
#include "seapo/injector.hpp"
#include "seapo/taxonomy.hpp"

namespace seapo {

struct EvaluatorOptions {
    std::string model = "seapo-dev";
    double temperature = 0.0;
    int max_tokens = 16;
    int concurrency = 4;
};

struct DetectionResult {
    std::string record_id;
    ErrorSpec spec;
    bool verdict = false;
    std::string raw;
};

// Judge verdict parser: lowercases, trims surrounding whitespace and
// trailing punctuation, accepts exactly "yes"/"no". Throws JudgeParseError.
bool parse_detection_reply(const std::string& raw);

// Asks whether `answer` exhibits the spec's error. The judge call is
// re-asked once on an unparseable reply before JudgeParseError surfaces.
// Requires a strategic error type.
DetectionResult detect(Gateway& gateway, const std::string& question,
                       const std::string& answer, const ErrorSpec& spec,
                       const EvaluatorOptions& options = {},
                       const std::string& record_id = {});

struct TypeCounts {
    int64_t source_count = 0;   // detected in original chosen answers
    int64_t injected_count = 0; // detected in injected answers
    int64_t source_total = 0;   // evaluated originals for this type
    int64_t injected_total = 0; // evaluated injected records of this type
};

struct FailureCounts {
    int64_t parse_errors = 0;
    int64_t backend_errors = 0;
};

struct DetectionReport {
    std::map<ErrorType, TypeCounts> per_type;
    int64_t total_source = 0;
    int64_t total_injected = 0;
    FailureCounts failures;
};

// Judges every source's chosen answer against each strategic type present
// in `injected`, and every injected answer against its own type. Parse and
// backend failures are counted separately and excluded from the counts.
DetectionReport detect_report(Gateway& gateway,
                              const std::vector<SourceRecord>& sources,
                              const std::vector<InjectedRecord>& injected,
                              const EvaluatorOptions& options = {});

// Quality score in [1,10] parsed as a single base-10 integer; re-asked once
// on unparseable replies. ScoreOutOfRange for integers outside the scale.
int score_quality(Gateway& gateway, const std::string& question,
                  const std::string& answer, const EvaluatorOptions& options = {});

enum class Verdict { A, B, tie };

std::string_view to_string(Verdict verdict);

// Pairwise preference. With debias, the comparison runs a second time with
// operands swapped, the second verdict is mapped back to the original
// labels, and disagreement collapses to tie.
Verdict compare(Gateway& gateway, const std::string& question, const std::string& a,
                const std::string& b, bool debias = true,
                const EvaluatorOptions& options = {});

struct QualityReport {
    double mean_score = 0.0;
    double win_rate = 0.0;
    int64_t wins = 0;
    int64_t losses = 0;
    int64_t ties = 0;
    int64_t n = 0; // successful comparisons; win_rate = (wins + ties/2) / n
    FailureCounts failures;
};

// Scores every candidate answer and compares each candidate (side A)
// against its baseline (side B); ties earn half a win.
QualityReport quality_report(Gateway& gateway,
                             const std::vector<std::string>& questions,
                             const std::vector<std::string>& baseline_answers,
                             const std::vector<std::string>& candidate_answers,
                             bool debias = true,
                             const EvaluatorOptions& options = {});

nlohmann::ordered_json to_json(const DetectionReport& report);
nlohmann::ordered_json to_json(const QualityReport& report);
std::string to_table(const DetectionReport& report);
std::string to_table(const QualityReport& report);

} // namespace seapo
