#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "seapo/dataset.hpp"
#include "seapo/policy.hpp"

namespace seapo {

enum class Z0Mode { fixed, batch_kl };

struct ValueParams {
    double lambda = 1.0; // loss aversion
    double alpha = 1.0;  // risk attitude
    Z0Mode z0_mode = Z0Mode::fixed;
    double z0 = 0.0;            // reference point in fixed mode
    double grad_epsilon = 1e-6; // derivative clamp near the reference point
};

void validate(const ValueParams& params);
// alpha <= 1 with lambda >= 1; other values are allowed but worth a warning.
bool prospect_regime(const ValueParams& params);

// Prospect-theory value of z relative to z0: gains rise as (z-z0)^alpha,
// losses fall as -lambda*(z0-z)^alpha.
double value(double z, const ValueParams& params, double z0);
// dv/dz with |z-z0| clamped at grad_epsilon to bound the alpha<1 singularity.
double value_derivative(double z, const ValueParams& params, double z0);

enum class Objective { kto, dpo };
enum class KtoMode { paper_literal, sigmoid };

struct ObjectiveConfig {
    Objective objective = Objective::kto;
    double beta = 0.1; // reward temperature; 1 recovers the unscaled utility
    double lambda_desirable = 1.0;
    double lambda_undesirable = 1.0;
    KtoMode kto_mode = KtoMode::sigmoid;
    ValueParams value;
    // Paper-literal utilities past this magnitude trigger a divergence
    // warning during training.
    double utility_warn_cap = 10.0;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainConfig {
    double lr = 5e-2;
    int64_t total_steps = 200;
    int grad_accum = 8;
    int micro_batch = 2;
    uint64_t seed = 42;
    AdamConfig adam;
    int max_vocab = 4096;
};

// Cosine decay to zero, no warmup: 0.5*lr*(1+cos(pi*min(step,total)/total)).
double lr_at(int64_t step, const TrainConfig& config);

struct KtoExample {
    std::vector<int> prompt;
    std::vector<int> completion;
    bool desirable = true;
};

struct DpoExample {
    std::vector<int> prompt;
    std::vector<int> chosen;
    std::vector<int> rejected;
};

struct LossResult {
    double loss = 0.0;
    Matrix grad_a; // dLoss/dA
    Matrix grad_b; // dLoss/dB
    double z0_used = 0.0;
    // Unscaled reward sums by label (chosen/rejected for DPO), for metrics.
    double sum_reward_desirable = 0.0;
    double sum_reward_undesirable = 0.0;
    int64_t n_desirable = 0;
    int64_t n_undesirable = 0;
    int64_t utility_warnings = 0;
};

struct KtoTerms {
    double loss = 0.0;
    double dloss_dreward = 0.0; // w.r.t. the unscaled model reward
    double utility = 0.0;
};

// Per-example KTO arithmetic for an unscaled reward: r = beta * reward, the
// utility argument is mirrored through z0 for undesirable examples, and the
// loss is lambda_y minus the utility. Exposed so the objective math can be
// verified independently of any model.
KtoTerms kto_terms(double raw_reward, bool desirable, double z0,
                   const ObjectiveConfig& config);

// KTO objective over a labeled batch of tokenized examples. In batch_kl mode z0 is
// the gradient-detached, non-negative mean of rewards over cyclically
// mismatched (prompt, next completion) pairs and requires >= 2 examples.
// z0_override pins the reference point (used by the finite-difference
// checker, which must see the detached value as a constant).
LossResult kto_loss(const PolicyModel& model, const std::vector<KtoExample>& batch,
                    const ObjectiveConfig& config,
                    std::optional<double> z0_override = std::nullopt);

// Loss-only evaluation along the same code path, for finite differences.
double kto_loss_value(const PolicyModel& model, const std::vector<KtoExample>& batch,
                      const ObjectiveConfig& config,
                      std::optional<double> z0_override = std::nullopt);

// Paired objective: mean of -log sigmoid(beta * (reward(chosen) -
// reward(rejected))).
LossResult dpo_loss(const PolicyModel& model, const std::vector<DpoExample>& batch,
                    double beta);
double dpo_loss_value(const PolicyModel& model, const std::vector<DpoExample>& batch,
                      double beta);

struct AdamState {
    int64_t step = 0;
    Matrix m_a, v_a; // moments for lora_a
    Matrix m_b, v_b; // moments for lora_b
};

AdamState make_adam_state(const PolicyModel& model);

// Bias-corrected Adam update applied to the LoRA factors only; the base
// matrix is never touched. Throws ShapeMismatch.
void adam_step(PolicyModel& model, AdamState& state, const Matrix& grad_a,
               const Matrix& grad_b, double lr, const AdamConfig& config);

struct StepMetrics {
    int64_t step = 0; // 1-based
    double lr = 0.0;
    double loss = 0.0;
    double mean_reward_desirable = 0.0;
    double mean_reward_undesirable = 0.0;
    double reward_margin = 0.0;
};

struct TrainOutput {
    Tokenizer tokenizer;
    PolicyModel model;
    std::vector<StepMetrics> metrics;
};

// Builds the tokenizer and the smoothed-bigram reference matrix from the
// corpus, zero-initializes the LoRA delta, and runs total_steps Adam steps
// over seeded-shuffled micro-batches with gradient accumulation. Fully
// deterministic for a fixed seed.
TrainOutput train(const std::vector<KtoRecord>& records, const ObjectiveConfig& objective,
                  const TrainConfig& config);
TrainOutput train(const std::vector<DpoRecord>& records, const ObjectiveConfig& objective,
                  const TrainConfig& config);

// One JSON object per optimizer step.
void write_metrics(const std::string& path, const std::vector<StepMetrics>& metrics);

struct GradCheckReport {
    int trials = 0;
    int64_t coords = 0;
    double max_rel_error = 0.0;
};

// Compares analytic LoRA gradients against central finite differences over
// randomized small models and batches. Relative error is
// |a-n| / max(1e-8, |a|+|n|); the report carries the maximum seen. For the
// paper-literal value with alpha < 1, sample points are kept away from the
// z0 singularity.
GradCheckReport grad_check(const ObjectiveConfig& config, int trials, double h,
                           uint64_t seed);

} // namespace seapo
