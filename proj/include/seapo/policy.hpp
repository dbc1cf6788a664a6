#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace seapo {

// Whitespace tokenizer with a dense vocabulary in first-occurrence order.
// Ids 0 and 1 are reserved for <unk> and <bos>.
class Tokenizer {
public:
    static constexpr int kUnk = 0;
    static constexpr int kBos = 1;

    Tokenizer();

    static Tokenizer build(const std::vector<std::string>& corpus, int max_vocab = 4096);

    // Splits on ASCII whitespace; unknown tokens map to <unk>.
    std::vector<int> encode(std::string_view text) const;

    int vocab_size() const { return static_cast<int>(id_to_token_.size()); }
    const std::vector<std::string>& tokens() const { return id_to_token_; }

    // Used by checkpoint loading; tokens must be dense and start with the
    // two reserved entries.
    static Tokenizer from_tokens(std::vector<std::string> tokens);

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

struct Matrix {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int64_t r, int64_t c) : rows(r), cols(c), data(static_cast<size_t>(r * c), 0.0) {}

    double& operator()(int64_t i, int64_t j) {
        return data[static_cast<size_t>(i * cols + j)];
    }
    double operator()(int64_t i, int64_t j) const {
        return data[static_cast<size_t>(i * cols + j)];
    }
};

// Bigram next-token policy: a frozen V x V logit matrix `base` defines the
// reference distribution, and a rank-r LoRA delta defines the trainable
// policy. Effective logits are base + (lora_alpha / rank) * lora_b * lora_a,
// so zero-initialized lora_b makes policy and reference identical.
struct PolicyModel {
    int vocab = 0;
    int rank = 8;
    double lora_alpha = 16.0;
    Matrix base;   // V x V, frozen
    Matrix lora_a; // rank x V
    Matrix lora_b; // V x rank

    double scaling() const { return lora_alpha / static_cast<double>(rank); }

    // Logits for the next token after `prev`, written into `out` (size V).
    void policy_row(int prev, std::vector<double>& out) const;
    void reference_row(int prev, std::vector<double>& out) const;
};

enum class Which { policy, reference };

// Sum of log softmax(next | prev) over the completion, starting from the
// last prompt token (or <bos> when the prompt is empty). Double precision
// with log-sum-exp stabilization. Throws EmptyCompletion / IdOutOfRange.
double log_prob(const PolicyModel& model, Which which, std::span<const int> prompt,
                std::span<const int> completion);

// log policy(y|x) - log reference(y|x).
double reward(const PolicyModel& model, std::span<const int> prompt,
              std::span<const int> completion);

// Versioned plain-text checkpoint: header (magic, version, shapes,
// lora_alpha, vocab listing) followed by row-major decimal arrays for the
// base, lora_a, and lora_b matrices. Values round-trip exactly.
void save_checkpoint(const std::string& path, const Tokenizer& tokenizer,
                     const PolicyModel& model);
std::pair<Tokenizer, PolicyModel> load_checkpoint(const std::string& path);

} // namespace seapo
