#include "seapo/policy.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "seapo/error.hpp"

namespace seapo {

namespace {

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v';
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) {
        throw Error(ErrorCode::io, "double formatting failed");
    }
    return std::string(buf, ptr);
}

double parse_double(std::string_view text) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw Error(ErrorCode::schema,
                    "malformed number \"" + std::string(text) + "\" in checkpoint");
    }
    return v;
}

void check_ids(std::span<const int> ids, int vocab) {
    for (int id : ids) {
        if (id < 0 || id >= vocab) {
            throw Error(ErrorCode::id_out_of_range,
                        "token id " + std::to_string(id) + " outside vocab of " +
                            std::to_string(vocab));
        }
    }
}

double row_log_softmax_at(const std::vector<double>& row, int target) {
    const double m = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) {
        sum += std::exp(v - m);
    }
    return row[static_cast<size_t>(target)] - m - std::log(sum);
}

void read_matrix(std::istream& in, Matrix& m, const char* section) {
    std::string line;
    if (!std::getline(in, line) || line != section) {
        throw Error(ErrorCode::schema,
                    std::string("checkpoint section \"") + section + "\" missing");
    }
    for (int64_t i = 0; i < m.rows; ++i) {
        if (!std::getline(in, line)) {
            throw Error(ErrorCode::schema,
                        std::string("checkpoint section \"") + section + "\" truncated");
        }
        std::string_view rest(line);
        for (int64_t j = 0; j < m.cols; ++j) {
            while (!rest.empty() && rest.front() == ' ') {
                rest.remove_prefix(1);
            }
            const size_t end = rest.find(' ');
            const std::string_view tok =
                end == std::string_view::npos ? rest : rest.substr(0, end);
            if (tok.empty()) {
                throw Error(ErrorCode::schema,
                            std::string("checkpoint row too short in \"") + section +
                                "\"");
            }
            m(i, j) = parse_double(tok);
            rest = end == std::string_view::npos ? std::string_view()
                                                 : rest.substr(end + 1);
        }
    }
}

} // namespace

Tokenizer::Tokenizer() {
    id_to_token_ = {"<unk>", "<bos>"};
    token_to_id_ = {{"<unk>", kUnk}, {"<bos>", kBos}};
}

Tokenizer Tokenizer::build(const std::vector<std::string>& corpus, int max_vocab) {
    if (max_vocab < 2) {
        throw Error(ErrorCode::invalid_argument, "max_vocab must be at least 2");
    }
    Tokenizer tok;
    for (const std::string& text : corpus) {
        size_t i = 0;
        while (i < text.size()) {
            while (i < text.size() && is_space(text[i])) {
                ++i;
            }
            size_t j = i;
            while (j < text.size() && !is_space(text[j])) {
                ++j;
            }
            if (j > i && tok.vocab_size() < max_vocab) {
                const std::string word = text.substr(i, j - i);
                if (!tok.token_to_id_.count(word)) {
                    tok.token_to_id_.emplace(word, tok.vocab_size());
                    tok.id_to_token_.push_back(word);
                }
            }
            i = j;
        }
    }
    return tok;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) {
            ++i;
        }
        size_t j = i;
        while (j < text.size() && !is_space(text[j])) {
            ++j;
        }
        if (j > i) {
            auto it = token_to_id_.find(std::string(text.substr(i, j - i)));
            ids.push_back(it == token_to_id_.end() ? kUnk : it->second);
        }
        i = j;
    }
    return ids;
}

Tokenizer Tokenizer::from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < 2 || tokens[0] != "<unk>" || tokens[1] != "<bos>") {
        throw Error(ErrorCode::schema,
                    "vocab listing must start with <unk> and <bos>");
    }
    Tokenizer tok;
    tok.id_to_token_ = std::move(tokens);
    tok.token_to_id_.clear();
    for (size_t i = 0; i < tok.id_to_token_.size(); ++i) {
        tok.token_to_id_.emplace(tok.id_to_token_[i], static_cast<int>(i));
    }
    return tok;
}

void PolicyModel::policy_row(int prev, std::vector<double>& out) const {
    out.assign(static_cast<size_t>(vocab), 0.0);
    const double s = scaling();
    for (int v = 0; v < vocab; ++v) {
        out[static_cast<size_t>(v)] = base(prev, v);
    }
    for (int k = 0; k < rank; ++k) {
        const double bk = s * lora_b(prev, k);
        if (bk == 0.0) {
            continue;
        }
        for (int v = 0; v < vocab; ++v) {
            out[static_cast<size_t>(v)] += bk * lora_a(k, v);
        }
    }
}

void PolicyModel::reference_row(int prev, std::vector<double>& out) const {
    out.assign(static_cast<size_t>(vocab), 0.0);
    for (int v = 0; v < vocab; ++v) {
        out[static_cast<size_t>(v)] = base(prev, v);
    }
}

double log_prob(const PolicyModel& model, Which which, std::span<const int> prompt,
                std::span<const int> completion) {
    if (completion.empty()) {
        throw Error(ErrorCode::empty_completion, "completion has no tokens");
    }
    check_ids(prompt, model.vocab);
    check_ids(completion, model.vocab);

    std::vector<double> row;
    int prev = prompt.empty() ? Tokenizer::kBos : prompt.back();
    double total = 0.0;
    for (int y : completion) {
        if (which == Which::policy) {
            model.policy_row(prev, row);
        } else {
            model.reference_row(prev, row);
        }
        total += row_log_softmax_at(row, y);
        prev = y;
    }
    return total;
}

double reward(const PolicyModel& model, std::span<const int> prompt,
              std::span<const int> completion) {
    return log_prob(model, Which::policy, prompt, completion) -
           log_prob(model, Which::reference, prompt, completion);
}

void save_checkpoint(const std::string& path, const Tokenizer& tokenizer,
                     const PolicyModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::io, "cannot write " + path);
    }
    out << "SEAPO-CKPT 1\n";
    out << "vocab_size " << model.vocab << "\n";
    out << "rank " << model.rank << "\n";
    out << "lora_alpha " << format_double(model.lora_alpha) << "\n";
    out << "vocab\n";
    for (const std::string& token : tokenizer.tokens()) {
        out << token << "\n";
    }
    auto write_matrix = [&out](const char* section, const Matrix& m) {
        out << section << "\n";
        for (int64_t i = 0; i < m.rows; ++i) {
            for (int64_t j = 0; j < m.cols; ++j) {
                if (j > 0) {
                    out << ' ';
                }
                out << format_double(m(i, j));
            }
            out << "\n";
        }
    };
    write_matrix("W", model.base);
    write_matrix("A", model.lora_a);
    write_matrix("B", model.lora_b);
}

std::pair<Tokenizer, PolicyModel> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::io, "cannot open " + path);
    }
    std::string line;
    if (!std::getline(in, line) || line != "SEAPO-CKPT 1") {
        throw Error(ErrorCode::schema, "not a version-1 checkpoint: " + path);
    }
    auto read_header = [&](const char* key) -> std::string {
        if (!std::getline(in, line)) {
            throw Error(ErrorCode::schema, "checkpoint header truncated");
        }
        const std::string prefix = std::string(key) + " ";
        if (line.rfind(prefix, 0) != 0) {
            throw Error(ErrorCode::schema,
                        std::string("expected header \"") + key + "\"");
        }
        return line.substr(prefix.size());
    };

    PolicyModel model;
    model.vocab = static_cast<int>(parse_double(read_header("vocab_size")));
    model.rank = static_cast<int>(parse_double(read_header("rank")));
    model.lora_alpha = parse_double(read_header("lora_alpha"));
    if (model.vocab < 2 || model.rank < 1) {
        throw Error(ErrorCode::schema, "checkpoint shapes are invalid");
    }

    if (!std::getline(in, line) || line != "vocab") {
        throw Error(ErrorCode::schema, "checkpoint vocab section missing");
    }
    std::vector<std::string> tokens;
    tokens.reserve(static_cast<size_t>(model.vocab));
    for (int i = 0; i < model.vocab; ++i) {
        if (!std::getline(in, line)) {
            throw Error(ErrorCode::schema, "checkpoint vocab truncated");
        }
        tokens.push_back(line);
    }

    model.base = Matrix(model.vocab, model.vocab);
    model.lora_a = Matrix(model.rank, model.vocab);
    model.lora_b = Matrix(model.vocab, model.rank);
    read_matrix(in, model.base, "W");
    read_matrix(in, model.lora_a, "A");
    read_matrix(in, model.lora_b, "B");

    return {Tokenizer::from_tokens(std::move(tokens)), std::move(model)};
}

} // namespace seapo
