#include "seapo/taxonomy.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "seapo/error.hpp"

namespace seapo {

namespace {

constexpr std::string_view kCorrectnessDescription =
    "Mistakes related to factual accuracy or calculations, such as incorrect facts, "
    "reasoning errors, translation issues, or improper use of tools and formulas.";

constexpr std::string_view kLogicDescription =
    "Issues where the reasoning or argumentation is flawed, such as contradictions, "
    "unsupported conclusions, circular reasoning, or failure to follow a logical "
    "sequence in problem-solving or explanation.";

constexpr std::string_view kHallucinationDescription =
    "Instances where the model generates information that is completely fabricated "
    "or false, without basis in reality or relevant data, often resulting in the "
    "creation of nonexistent facts or misleading details.";

constexpr std::string_view kInjectionBody =
    R"__(Your task is to deliberately modify the provided response to introduce the specified error.

### Task:
Analyze the given question, original response, error type, and error description. Then, revise the response to intentionally include the specified error.

1. **Question**: {question}
2. **Original Response**: {response}
3. **Error Type**: {error_type}
4. **Error Description**: {error_description}

### Instructions:
- Modify the original response to clearly incorporate the specified error.
- Do not include any explanations, notes, or other text in your output.
- Output only the revised response.

### Revised response:)__";

constexpr std::string_view kDetectionBody =
    R"__(You are an AI evaluator. I will give you a question, its answer, and a specific error type with a description. Your task is to determine if the answer contains the described error. Please respond with "yes" if the answer contains the error and "no" if it does not. Only respond with "yes" or "no" without any further explanation.

Question: "{question}"
Answer: "{answer}"
Error Type: "{error_type}"
Error Description: "{error_description}"

Does the answer contain the described error?)__";

constexpr std::string_view kSeverityInjectionBody =
    R"__(Your task is to deliberately modify the provided response so that it becomes incorrect at the specified error severity level.

### Task:
Analyze the given question, original response, severity level, and severity description. Then, revise the response so that its errors match the specified severity.

1. **Question**: {question}
2. **Original Response**: {response}
3. **Severity Level**: {severity_level}
4. **Severity Description**: {severity_description}

### Instructions:
- Modify the original response so that the amount of error matches the specified severity level.
- Do not include any explanations, notes, or other text in your output.
- Output only the modified response.

### Modified response:)__";

constexpr std::string_view kQualityScoringBody =
    R"__(## Task:
Evaluate the quality of an answer while COMPLETELY IGNORING factual errors.

## Note:
The answer may contain inaccuracies or technical errors. DO NOT consider correctness in scoring.

## Dimensions (1-10 scale):
1. Logical Structure - Organization and reasoning flow
2. Language Fluency - Grammar and readability
3. Topic Relevance - Alignment with question intent
4. Depth - Detail level and analysis complexity
5. Consistency - Self-contradiction check

## Input:
Question: {question}
Answer: {answer}

## Output Format:
Single integer between 1-10 calculated as:
(Round average of all dimension scores to nearest integer)

ONLY OUTPUT THE FINAL INTEGER)__";

constexpr std::string_view kPairwiseComparisonBody =
    R"__(Compare two answers (A/B) while COMPLETELY IGNORING FACTUAL ERRORS. Determine which response demonstrates superior quality in non-factual dimensions.

## Critical Rules:
1. DO NOT CONSIDER: Accuracy, technical correctness, or truthfulness
2. EVALUATE ONLY:
   Structural integrity of arguments
   Language mechanics and readability
   Relevance to question intent
   Depth of analysis
   Internal consistency
3. Tie only if indistinguishable across all dimensions

## Assessment Protocol:
1. Read both answers fully
2. Identify potential errors → Explicitly exclude from evaluation
3. Compare dimension-by-dimension:
   a) Logical Structure: Which has clearer reasoning flow?
   b) Language Fluency: Which is more professionally written?
   c) Topic Relevance: Which stays focused on core question?
   d) Depth: Which provides more layered analysis?
   e) Consistency: Which avoids self-contradictions?
4. Declare winner with majority advantages

## Input:
Question: {question}
Answer A: {answer_a}
Answer B: {answer_b}

## Output:
Strictly ONE of these options:
A | B | tie

DO NOT OUTPUT ANY OTHER TEXT OR EXPLANATION.)__";

constexpr std::array<std::string_view, 9> kPlaceholderNames = {
    "question",        "response",         "answer",
    "answer_a",        "answer_b",         "error_type",
    "error_description", "severity_level", "severity_description",
};

const std::array<PromptTemplate, 5>& all_templates() {
    static const std::array<PromptTemplate, 5> templates = {{
        {TemplateId::injection, std::string(kInjectionBody)},
        {TemplateId::detection, std::string(kDetectionBody)},
        {TemplateId::severity_injection, std::string(kSeverityInjectionBody)},
        {TemplateId::quality_scoring, std::string(kQualityScoringBody)},
        {TemplateId::pairwise_comparison, std::string(kPairwiseComparisonBody)},
    }};
    return templates;
}

} // namespace

std::string_view to_string(ErrorType type) {
    switch (type) {
    case ErrorType::correctness: return "correctness";
    case ErrorType::logic: return "logic";
    case ErrorType::hallucination: return "hallucination";
    case ErrorType::untargeted: return "untargeted";
    case ErrorType::multi: return "multi";
    }
    return "?";
}

std::string_view to_string(Severity severity) {
    switch (severity) {
    case Severity::minor: return "minor";
    case Severity::moderate: return "moderate";
    case Severity::major: return "major";
    case Severity::critical: return "critical";
    }
    return "?";
}

ErrorType parse_error_type(std::string_view name) {
    if (name == "correctness") return ErrorType::correctness;
    if (name == "logic") return ErrorType::logic;
    if (name == "hallucination") return ErrorType::hallucination;
    if (name == "untargeted") return ErrorType::untargeted;
    if (name == "multi") return ErrorType::multi;
    throw Error(ErrorCode::invalid_argument,
                "unknown error type \"" + std::string(name) + "\"");
}

Severity parse_severity(std::string_view name) {
    if (name == "minor") return Severity::minor;
    if (name == "moderate") return Severity::moderate;
    if (name == "major") return Severity::major;
    if (name == "critical") return Severity::critical;
    throw Error(ErrorCode::invalid_argument,
                "unknown severity \"" + std::string(name) + "\"");
}

std::string description(ErrorType type) {
    switch (type) {
    case ErrorType::correctness: return std::string(kCorrectnessDescription);
    case ErrorType::logic: return std::string(kLogicDescription);
    case ErrorType::hallucination: return std::string(kHallucinationDescription);
    case ErrorType::untargeted: return std::string();
    case ErrorType::multi:
        return std::string(kLogicDescription) + " " +
               std::string(kCorrectnessDescription) + " " +
               std::string(kHallucinationDescription);
    }
    return std::string();
}

std::string_view description(Severity severity) {
    switch (severity) {
    case Severity::minor: return "few errors";
    case Severity::moderate: return "medium errors";
    case Severity::major: return "many errors";
    case Severity::critical: return "almost entirely incorrect";
    }
    return "?";
}

int order_rank(ErrorType type) {
    switch (type) {
    case ErrorType::logic: return 0;
    case ErrorType::correctness: return 1;
    case ErrorType::hallucination: return 2;
    case ErrorType::untargeted: return 3;
    case ErrorType::multi: return 4;
    }
    return 5;
}

bool ErrorSpec::operator<(const ErrorSpec& other) const {
    if (order_rank(type) != order_rank(other.type)) {
        return order_rank(type) < order_rank(other.type);
    }
    // No severity sorts before any severity; severities in scale order.
    const int a = severity ? 1 + static_cast<int>(*severity) : 0;
    const int b = other.severity ? 1 + static_cast<int>(*other.severity) : 0;
    return a < b;
}

std::string ErrorSpec::key() const {
    std::string k(to_string(type));
    if (severity) {
        k += "@";
        k += to_string(*severity);
    }
    return k;
}

void validate(const ErrorSpec& spec) {
    if (spec.severity && spec.type == ErrorType::multi) {
        throw Error(ErrorCode::validation,
                    "severity cannot be combined with the multi type");
    }
}

ErrorSpec parse_spec_key(std::string_view key) {
    ErrorSpec spec;
    const size_t at = key.find('@');
    if (at == std::string_view::npos) {
        spec.type = parse_error_type(key);
    } else {
        spec.type = parse_error_type(key.substr(0, at));
        spec.severity = parse_severity(key.substr(at + 1));
    }
    validate(spec);
    return spec;
}

std::string_view to_string(TemplateId id) {
    switch (id) {
    case TemplateId::injection: return "injection";
    case TemplateId::detection: return "detection";
    case TemplateId::severity_injection: return "severity_injection";
    case TemplateId::quality_scoring: return "quality_scoring";
    case TemplateId::pairwise_comparison: return "pairwise_comparison";
    }
    return "?";
}

const PromptTemplate& shipped_template(TemplateId id) {
    return all_templates()[static_cast<size_t>(id)];
}

std::set<std::string> placeholders_in(std::string_view body) {
    std::set<std::string> found;
    for (size_t pos = 0; (pos = body.find('{', pos)) != std::string_view::npos; ++pos) {
        for (std::string_view name : kPlaceholderNames) {
            if (body.compare(pos + 1, name.size(), name) == 0 &&
                pos + 1 + name.size() < body.size() &&
                body[pos + 1 + name.size()] == '}') {
                found.emplace(name);
                break;
            }
        }
    }
    return found;
}

std::string render(const PromptTemplate& tmpl,
                   const std::map<std::string, std::string>& bindings) {
    const std::set<std::string> slots = placeholders_in(tmpl.body);
    for (const auto& [name, value] : bindings) {
        if (!slots.count(name)) {
            throw Error(ErrorCode::unknown_binding, name);
        }
        if (value.empty()) {
            throw Error(ErrorCode::invalid_argument,
                        "empty binding value for \"" + name + "\"");
        }
    }

    std::string out;
    out.reserve(tmpl.body.size());
    const std::string_view body = tmpl.body;
    size_t pos = 0;
    while (pos < body.size()) {
        const size_t brace = body.find('{', pos);
        if (brace == std::string_view::npos) {
            out.append(body.substr(pos));
            break;
        }
        out.append(body.substr(pos, brace - pos));
        bool replaced = false;
        for (std::string_view name : kPlaceholderNames) {
            if (body.compare(brace + 1, name.size(), name) == 0 &&
                brace + 1 + name.size() < body.size() &&
                body[brace + 1 + name.size()] == '}') {
                auto it = bindings.find(std::string(name));
                if (it == bindings.end()) {
                    throw Error(ErrorCode::missing_binding, std::string(name));
                }
                out.append(it->second);
                pos = brace + name.size() + 2;
                replaced = true;
                break;
            }
        }
        if (!replaced) {
            out.push_back('{');
            pos = brace + 1;
        }
    }
    return out;
}

const PromptTemplate& template_for(const ErrorSpec& spec) {
    validate(spec);
    return spec.severity ? shipped_template(TemplateId::severity_injection)
                         : shipped_template(TemplateId::injection);
}

std::map<std::string, std::string> injection_bindings(const ErrorSpec& spec,
                                                      std::string_view question,
                                                      std::string_view response) {
    validate(spec);
    std::map<std::string, std::string> bindings;
    bindings["question"] = std::string(question);
    bindings["response"] = std::string(response);
    if (spec.severity) {
        bindings["severity_level"] = std::string(to_string(*spec.severity));
        bindings["severity_description"] = std::string(description(*spec.severity));
        return bindings;
    }
    switch (spec.type) {
    case ErrorType::untargeted:
        bindings["error_type"] = std::string(kUntargetedTypeBinding);
        bindings["error_description"] = std::string(kUntargetedDescriptionBinding);
        break;
    case ErrorType::multi:
        bindings["error_type"] = "logic, correctness, hallucination";
        bindings["error_description"] = description(ErrorType::multi);
        break;
    default:
        bindings["error_type"] = std::string(to_string(spec.type));
        bindings["error_description"] = description(spec.type);
        break;
    }
    return bindings;
}

void export_templates(const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (const PromptTemplate& tmpl : all_templates()) {
        const auto path =
            std::filesystem::path(dir) / (std::string(to_string(tmpl.id)) + ".txt");
        std::ofstream out(path, std::ios::binary);
        if (!out) {
            throw Error(ErrorCode::io, "cannot write " + path.string());
        }
        out << tmpl.body;
    }
}

std::map<TemplateId, PromptTemplate> load_template_overrides(const std::string& dir) {
    std::map<TemplateId, PromptTemplate> result;
    for (const PromptTemplate& shipped : all_templates()) {
        PromptTemplate tmpl = shipped;
        const auto path =
            std::filesystem::path(dir) / (std::string(to_string(tmpl.id)) + ".txt");
        std::ifstream in(path, std::ios::binary);
        if (in) {
            std::ostringstream buf;
            buf << in.rdbuf();
            tmpl.body = buf.str();
            if (placeholders_in(tmpl.body) != placeholders_in(shipped.body)) {
                throw Error(ErrorCode::validation,
                            "override for " + std::string(to_string(tmpl.id)) +
                                " changes the placeholder set");
            }
        }
        result.emplace(tmpl.id, std::move(tmpl));
    }
    return result;
}

} // namespace seapo
