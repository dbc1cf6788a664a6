#include "seapo/evaluator.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <functional>
#include <iomanip>
#include <sstream>
#include <thread>

#include "seapo/util.hpp"

namespace seapo {

namespace {

using nlohmann::ordered_json;

std::string judge_reply(Gateway& gateway, const std::string& prompt,
                        const EvaluatorOptions& options) {
    CompletionRequest request;
    request.model = options.model;
    request.messages = {{Role::user, prompt}};
    request.temperature = options.temperature;
    request.max_tokens = options.max_tokens;
    return gateway.complete(request).text;
}

// Issues the judge call and parses it, re-asking once when the parser
// rejects the reply.
template <typename Parser>
auto ask_with_retry(Gateway& gateway, const std::string& prompt,
                    const EvaluatorOptions& options, Parser parse)
    -> std::pair<decltype(parse(std::string())), std::string> {
    std::string raw = judge_reply(gateway, prompt, options);
    try {
        return {parse(raw), raw};
    } catch (const Error& e) {
        if (e.code() != ErrorCode::judge_parse) {
            throw;
        }
    }
    raw = judge_reply(gateway, prompt, options);
    return {parse(raw), raw};
}

std::string normalize_verdict_text(const std::string& raw) {
    std::string s = trim(raw);
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    while (!s.empty() && std::strchr(".,!?;:", s.back()) != nullptr) {
        s.pop_back();
    }
    return s;
}

int parse_score_reply(const std::string& raw) {
    const std::string s = trim(raw);
    const size_t start = (s.size() > 1 && (s[0] == '-' || s[0] == '+')) ? 1 : 0;
    if (s.size() == start ||
        !std::all_of(s.begin() + static_cast<long>(start), s.end(),
                     [](unsigned char c) { return std::isdigit(c) != 0; })) {
        throw Error(ErrorCode::judge_parse, "not an integer: \"" + raw + "\"");
    }
    if (s.size() - start > 6) {
        throw Error(ErrorCode::score_out_of_range, "score \"" + s + "\" not in [1,10]");
    }
    const long value = std::stol(s);
    if (value < 1 || value > 10) {
        throw Error(ErrorCode::score_out_of_range,
                    "score " + std::to_string(value) + " not in [1,10]");
    }
    return static_cast<int>(value);
}

Verdict parse_compare_reply(const std::string& raw) {
    const std::string s = normalize_verdict_text(raw);
    if (s == "a") {
        return Verdict::A;
    }
    if (s == "b") {
        return Verdict::B;
    }
    if (s == "tie") {
        return Verdict::tie;
    }
    throw Error(ErrorCode::judge_parse, "not one of A/B/tie: \"" + raw + "\"");
}

// Runs `jobs` closures with at most `concurrency` threads; each closure
// owns its slot so aggregation order is independent of scheduling.
void run_bounded(size_t jobs, int concurrency,
                 const std::function<void(size_t)>& body) {
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const size_t job = next.fetch_add(1);
            if (job >= jobs) {
                return;
            }
            body(job);
        }
    };
    const size_t threads =
        std::min<size_t>(std::max(concurrency, 1), std::max<size_t>(jobs, 1));
    if (threads <= 1) {
        worker();
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (size_t i = 0; i < threads; ++i) {
        pool.emplace_back(worker);
    }
    for (auto& t : pool) {
        t.join();
    }
}

enum class JobOutcome { yes, no, parse_failed, backend_failed };

} // namespace

bool parse_detection_reply(const std::string& raw) {
    const std::string s = normalize_verdict_text(raw);
    if (s == "yes") {
        return true;
    }
    if (s == "no") {
        return false;
    }
    throw Error(ErrorCode::judge_parse, "not yes/no: \"" + raw + "\"");
}

DetectionResult detect(Gateway& gateway, const std::string& question,
                       const std::string& answer, const ErrorSpec& spec,
                       const EvaluatorOptions& options, const std::string& record_id) {
    if (spec.type != ErrorType::correctness && spec.type != ErrorType::logic &&
        spec.type != ErrorType::hallucination) {
        throw Error(ErrorCode::invalid_argument,
                    "detection requires a strategic error type");
    }
    std::map<std::string, std::string> bindings = {
        {"question", question},
        {"answer", answer},
        {"error_type", std::string(to_string(spec.type))},
        {"error_description", description(spec.type)},
    };
    const std::string prompt = render(shipped_template(TemplateId::detection), bindings);
    auto [verdict, raw] =
        ask_with_retry(gateway, prompt, options, parse_detection_reply);
    return DetectionResult{record_id, spec, verdict, raw};
}

DetectionReport detect_report(Gateway& gateway,
                              const std::vector<SourceRecord>& sources,
                              const std::vector<InjectedRecord>& injected,
                              const EvaluatorOptions& options) {
    std::vector<ErrorType> types;
    for (const InjectedRecord& rec : injected) {
        if (rec.spec.type != ErrorType::correctness &&
            rec.spec.type != ErrorType::logic &&
            rec.spec.type != ErrorType::hallucination) {
            throw Error(ErrorCode::invalid_argument,
                        "detect_report requires strategic injected types, got \"" +
                            std::string(to_string(rec.spec.type)) + "\"");
        }
        if (std::find(types.begin(), types.end(), rec.spec.type) == types.end()) {
            types.push_back(rec.spec.type);
        }
    }
    std::sort(types.begin(), types.end(), [](ErrorType a, ErrorType b) {
        return order_rank(a) < order_rank(b);
    });

    struct Job {
        ErrorType type;
        bool is_injected;
        const std::string* question;
        const std::string* answer;
    };
    std::vector<Job> jobs;
    for (ErrorType type : types) {
        for (const SourceRecord& src : sources) {
            jobs.push_back(Job{type, false, &src.prompt, &src.chosen});
        }
    }
    for (const InjectedRecord& rec : injected) {
        jobs.push_back(Job{rec.spec.type, true, &rec.prompt, &rec.injected});
    }

    std::vector<JobOutcome> outcomes(jobs.size(), JobOutcome::no);
    run_bounded(jobs.size(), options.concurrency, [&](size_t i) {
        const Job& job = jobs[i];
        try {
            const DetectionResult r = detect(gateway, *job.question, *job.answer,
                                             ErrorSpec{job.type, std::nullopt}, options);
            outcomes[i] = r.verdict ? JobOutcome::yes : JobOutcome::no;
        } catch (const Error& e) {
            outcomes[i] = e.code() == ErrorCode::judge_parse ? JobOutcome::parse_failed
                                                             : JobOutcome::backend_failed;
        }
    });

    DetectionReport report;
    for (ErrorType type : types) {
        report.per_type[type];
    }
    for (size_t i = 0; i < jobs.size(); ++i) {
        TypeCounts& counts = report.per_type[jobs[i].type];
        switch (outcomes[i]) {
        case JobOutcome::parse_failed:
            report.failures.parse_errors += 1;
            continue;
        case JobOutcome::backend_failed:
            report.failures.backend_errors += 1;
            continue;
        case JobOutcome::yes:
        case JobOutcome::no:
            break;
        }
        if (jobs[i].is_injected) {
            counts.injected_total += 1;
            report.total_injected += 1;
            if (outcomes[i] == JobOutcome::yes) {
                counts.injected_count += 1;
            }
        } else {
            counts.source_total += 1;
            report.total_source += 1;
            if (outcomes[i] == JobOutcome::yes) {
                counts.source_count += 1;
            }
        }
    }
    return report;
}

int score_quality(Gateway& gateway, const std::string& question,
                  const std::string& answer, const EvaluatorOptions& options) {
    std::map<std::string, std::string> bindings = {
        {"question", question},
        {"answer", answer},
    };
    const std::string prompt =
        render(shipped_template(TemplateId::quality_scoring), bindings);
    return ask_with_retry(gateway, prompt, options, parse_score_reply).first;
}

std::string_view to_string(Verdict verdict) {
    switch (verdict) {
    case Verdict::A: return "A";
    case Verdict::B: return "B";
    case Verdict::tie: return "tie";
    }
    return "?";
}

namespace {

Verdict compare_once(Gateway& gateway, const std::string& question,
                     const std::string& a, const std::string& b,
                     const EvaluatorOptions& options) {
    std::map<std::string, std::string> bindings = {
        {"question", question},
        {"answer_a", a},
        {"answer_b", b},
    };
    const std::string prompt =
        render(shipped_template(TemplateId::pairwise_comparison), bindings);
    return ask_with_retry(gateway, prompt, options, parse_compare_reply).first;
}

} // namespace

Verdict compare(Gateway& gateway, const std::string& question, const std::string& a,
                const std::string& b, bool debias, const EvaluatorOptions& options) {
    const Verdict forward = compare_once(gateway, question, a, b, options);
    if (!debias) {
        return forward;
    }
    const Verdict swapped = compare_once(gateway, question, b, a, options);
    const Verdict mirrored = swapped == Verdict::A   ? Verdict::B
                             : swapped == Verdict::B ? Verdict::A
                                                     : Verdict::tie;
    return forward == mirrored ? forward : Verdict::tie;
}

QualityReport quality_report(Gateway& gateway,
                             const std::vector<std::string>& questions,
                             const std::vector<std::string>& baseline_answers,
                             const std::vector<std::string>& candidate_answers,
                             bool debias, const EvaluatorOptions& options) {
    if (questions.size() != baseline_answers.size() ||
        questions.size() != candidate_answers.size()) {
        throw Error(ErrorCode::invalid_argument,
                    "questions, baseline, and candidate lists must be index-aligned");
    }
    const size_t n = questions.size();

    std::vector<int> scores(n, 0);
    std::vector<int> verdicts(n, -1); // 0=A(win) 1=B(loss) 2=tie, -1 failed
    std::vector<JobOutcome> score_state(n, JobOutcome::no);
    std::vector<JobOutcome> compare_state(n, JobOutcome::no);

    run_bounded(n * 2, options.concurrency, [&](size_t job) {
        const size_t i = job / 2;
        if (job % 2 == 0) {
            try {
                scores[i] = score_quality(gateway, questions[i], candidate_answers[i],
                                          options);
                score_state[i] = JobOutcome::yes;
            } catch (const Error& e) {
                score_state[i] = e.code() == ErrorCode::judge_parse ||
                                         e.code() == ErrorCode::score_out_of_range
                                     ? JobOutcome::parse_failed
                                     : JobOutcome::backend_failed;
            }
        } else {
            try {
                verdicts[i] = static_cast<int>(compare(gateway, questions[i],
                                                       candidate_answers[i],
                                                       baseline_answers[i], debias,
                                                       options));
                compare_state[i] = JobOutcome::yes;
            } catch (const Error& e) {
                compare_state[i] = e.code() == ErrorCode::judge_parse
                                       ? JobOutcome::parse_failed
                                       : JobOutcome::backend_failed;
            }
        }
    });

    QualityReport report;
    int64_t scored = 0;
    double score_sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        switch (score_state[i]) {
        case JobOutcome::yes:
            scored += 1;
            score_sum += scores[i];
            break;
        case JobOutcome::parse_failed:
            report.failures.parse_errors += 1;
            break;
        case JobOutcome::backend_failed:
            report.failures.backend_errors += 1;
            break;
        default:
            break;
        }
        switch (compare_state[i]) {
        case JobOutcome::yes:
            if (verdicts[i] == 0) {
                report.wins += 1;
            } else if (verdicts[i] == 1) {
                report.losses += 1;
            } else {
                report.ties += 1;
            }
            break;
        case JobOutcome::parse_failed:
            report.failures.parse_errors += 1;
            break;
        case JobOutcome::backend_failed:
            report.failures.backend_errors += 1;
            break;
        default:
            break;
        }
    }
    report.n = report.wins + report.losses + report.ties;
    report.mean_score = scored > 0 ? score_sum / static_cast<double>(scored) : 0.0;
    report.win_rate =
        report.n > 0
            ? (static_cast<double>(report.wins) + 0.5 * static_cast<double>(report.ties)) /
                  static_cast<double>(report.n)
            : 0.0;
    return report;
}

ordered_json to_json(const DetectionReport& report) {
    ordered_json per_type = ordered_json::object();
    for (const auto& [type, counts] : report.per_type) {
        per_type[std::string(to_string(type))] = {
            {"source_count", counts.source_count},
            {"injected_count", counts.injected_count},
            {"source_total", counts.source_total},
            {"injected_total", counts.injected_total},
        };
    }
    return ordered_json{
        {"per_type", per_type},
        {"totals", {{"source", report.total_source}, {"injected", report.total_injected}}},
        {"failures",
         {{"parse_errors", report.failures.parse_errors},
          {"backend_errors", report.failures.backend_errors}}},
    };
}

ordered_json to_json(const QualityReport& report) {
    return ordered_json{
        {"mean_score", report.mean_score},
        {"win_rate", report.win_rate},
        {"tally",
         {{"wins", report.wins}, {"losses", report.losses}, {"ties", report.ties}}},
        {"n", report.n},
        {"failures",
         {{"parse_errors", report.failures.parse_errors},
          {"backend_errors", report.failures.backend_errors}}},
    };
}

std::string to_table(const DetectionReport& report) {
    std::ostringstream out;
    out << std::left << std::setw(15) << "error type" << std::right << std::setw(10)
        << "source" << std::setw(12) << "injected" << std::setw(12) << "src eval"
        << std::setw(12) << "inj eval" << "\n";
    for (const auto& [type, counts] : report.per_type) {
        out << std::left << std::setw(15) << std::string(to_string(type)) << std::right
            << std::setw(10) << counts.source_count << std::setw(12)
            << counts.injected_count << std::setw(12) << counts.source_total
            << std::setw(12) << counts.injected_total << "\n";
    }
    out << "evaluated: source=" << report.total_source
        << " injected=" << report.total_injected
        << " | failures: parse=" << report.failures.parse_errors
        << " backend=" << report.failures.backend_errors << "\n";
    return out.str();
}

std::string to_table(const QualityReport& report) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(3);
    out << "mean_score " << report.mean_score << "\n"
        << "win_rate   " << report.win_rate << "\n"
        << "tally      wins=" << report.wins << " losses=" << report.losses
        << " ties=" << report.ties << " n=" << report.n << "\n"
        << "failures   parse=" << report.failures.parse_errors
        << " backend=" << report.failures.backend_errors << "\n";
    return out.str();
}

} // namespace seapo
