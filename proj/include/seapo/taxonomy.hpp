#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace seapo {

// The three strategic error categories plus the two derived injection modes:
// untargeted (no type constraint) and multi (all three types at once).
enum class ErrorType {
    correctness,
    logic,
    hallucination,
    untargeted,
    multi,
};

enum class Severity {
    minor,
    moderate,
    major,
    critical,
};

// Canonical lowercase names ("logic", "major", ...) used in prompts, plan
// strings, and JSONL fields.
std::string_view to_string(ErrorType type);
std::string_view to_string(Severity severity);
ErrorType parse_error_type(std::string_view name);
Severity parse_severity(std::string_view name);

// Category description. The three strategic types carry their fixed
// taxonomy texts; untargeted has none; multi is the concatenation of the
// three strategic descriptions in the order logic, correctness,
// hallucination.
std::string description(ErrorType type);
std::string_view description(Severity severity);

// Tie-break and concatenation rank: logic < correctness < hallucination <
// untargeted < multi.
int order_rank(ErrorType type);

struct ErrorSpec {
    ErrorType type = ErrorType::logic;
    std::optional<Severity> severity;

    bool operator==(const ErrorSpec& other) const {
        return type == other.type && severity == other.severity;
    }
    bool operator<(const ErrorSpec& other) const;

    // Plan-syntax key, e.g. "logic" or "correctness@major".
    std::string key() const;
};

// Throws ValidationError if severity is combined with the multi type (the
// severity prompt carries no type slot, so multi cannot be expressed).
void validate(const ErrorSpec& spec);
ErrorSpec parse_spec_key(std::string_view key);

enum class TemplateId {
    injection,
    detection,
    severity_injection,
    quality_scoring,
    pairwise_comparison,
};

std::string_view to_string(TemplateId id);

struct PromptTemplate {
    TemplateId id;
    std::string body;
};

// Shipped template for one id. Bodies are fixed constants; see
// export_templates for the on-disk copies.
const PromptTemplate& shipped_template(TemplateId id);

// Placeholder names occurring in a body, in the {name} syntax. Only the
// nine defined placeholder names are recognized; anything else in braces is
// literal text.
std::set<std::string> placeholders_in(std::string_view body);

// Substitutes every {name} placeholder with its binding. Throws
// MissingBinding if a placeholder is unbound, UnknownBinding if a binding
// names no placeholder in the body, InvalidArgument on empty binding values.
std::string render(const PromptTemplate& tmpl,
                   const std::map<std::string, std::string>& bindings);

// Selects the template for a spec: severity present -> severity_injection,
// otherwise injection (untargeted and multi use the injection template with
// substitute type/description bindings).
const PromptTemplate& template_for(const ErrorSpec& spec);

// Full binding map for an injection render of (question, response) under
// the spec, including the type/description or severity slots.
std::map<std::string, std::string> injection_bindings(const ErrorSpec& spec,
                                                      std::string_view question,
                                                      std::string_view response);

// Writes one <id>.txt per template into dir (created if needed).
void export_templates(const std::string& dir);

// Loads override bodies from dir (one <id>.txt per template; missing files
// keep the shipped body). Each override must contain exactly the shipped
// template's placeholder set; otherwise ValidationError.
std::map<TemplateId, PromptTemplate> load_template_overrides(const std::string& dir);

// The substitute bindings used when no verbatim prompt exists for the
// untargeted mode (kept as named constants so operators can audit or swap
// them via the override directory).
inline constexpr std::string_view kUntargetedTypeBinding = "any error";
inline constexpr std::string_view kUntargetedDescriptionBinding =
    "Modify the response to be incorrect in any way you choose.";

} // namespace seapo
