#include "seapo/jsonl.hpp"

#include <fstream>

#include "seapo/error.hpp"

namespace seapo::jsonl {

std::vector<std::pair<size_t, json>> read_objects(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::io, "cannot open " + path);
    }
    std::vector<std::pair<size_t, json>> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded() || !doc.is_object()) {
            throw Error(ErrorCode::schema,
                        "line " + std::to_string(line_no) + ": not a JSON object");
        }
        out.emplace_back(line_no, std::move(doc));
    }
    return out;
}

void write_lines(const std::string& path, const std::vector<ordered_json>& lines) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::io, "cannot write " + path);
    }
    for (const auto& doc : lines) {
        out << doc.dump() << "\n";
    }
}

std::string require_string(const json& obj, const char* field, size_t line_no) {
    auto it = obj.find(field);
    if (it == obj.end() || !it->is_string()) {
        throw Error(ErrorCode::schema, "line " + std::to_string(line_no) +
                                           ": missing or non-string field \"" +
                                           field + "\"");
    }
    return it->get<std::string>();
}

int64_t require_int(const json& obj, const char* field, size_t line_no) {
    auto it = obj.find(field);
    if (it == obj.end() || !it->is_number_integer()) {
        throw Error(ErrorCode::schema, "line " + std::to_string(line_no) +
                                           ": missing or non-integer field \"" +
                                           field + "\"");
    }
    return it->get<int64_t>();
}

json extract_unknown(const json& obj, const std::set<std::string>& known,
                     bool strict, size_t line_no) {
    json extra = json::object();
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!known.count(it.key())) {
            if (strict) {
                throw Error(ErrorCode::schema, "line " + std::to_string(line_no) +
                                                   ": unknown field \"" + it.key() +
                                                   "\"");
            }
            extra[it.key()] = it.value();
        }
    }
    return extra;
}

} // namespace seapo::jsonl
