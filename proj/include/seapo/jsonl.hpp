#pragma once

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace seapo::jsonl {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// Parses one JSON object per non-empty line; SchemaError carries the
// 1-based line number of any malformed line.
std::vector<std::pair<size_t, json>> read_objects(const std::string& path);

// Appends each document as one line, LF-terminated, UTF-8.
void write_lines(const std::string& path, const std::vector<ordered_json>& lines);

// Field accessors that raise SchemaError("line N: ...") on absence or
// wrong type.
std::string require_string(const json& obj, const char* field, size_t line_no);
int64_t require_int(const json& obj, const char* field, size_t line_no);

// Splits obj into (known, extra) by field name; throws SchemaError on the
// first unknown field when strict.
json extract_unknown(const json& obj, const std::set<std::string>& known,
                     bool strict, size_t line_no);

} // namespace seapo::jsonl
