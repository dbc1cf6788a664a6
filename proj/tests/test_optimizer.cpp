#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "seapo/optimizer.hpp"
#include "seapo/rng.hpp"

using namespace seapo;

namespace {

PolicyModel zero_lora_model(int vocab) {
    PolicyModel model;
    model.vocab = vocab;
    model.rank = 1;
    model.lora_alpha = 1.0;
    model.base = Matrix(vocab, vocab);
    model.lora_a = Matrix(1, vocab);
    model.lora_b = Matrix(vocab, 1);
    return model;
}

ObjectiveConfig kto_config(KtoMode mode, double beta = 0.1, double alpha = 1.0,
                           double lambda = 1.0) {
    ObjectiveConfig cfg;
    cfg.objective = Objective::kto;
    cfg.kto_mode = mode;
    cfg.beta = beta;
    cfg.value.alpha = alpha;
    cfg.value.lambda = lambda;
    return cfg;
}

// 100 desirable ("q" -> "good") + 100 undesirable ("q" -> "bad") records.
std::vector<KtoRecord> toy_kto_corpus() {
    std::vector<KtoRecord> records;
    for (int i = 0; i < 200; ++i) {
        KtoRecord rec;
        rec.id = "toy" + std::to_string(i);
        rec.prompt = "q";
        rec.label = i % 2 == 0 ? Label::desirable : Label::undesirable;
        rec.completion = rec.label == Label::desirable ? "good" : "bad";
        rec.source_id = "s" + std::to_string(i / 2);
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<DpoRecord> toy_dpo_corpus() {
    std::vector<DpoRecord> records;
    for (int i = 0; i < 200; ++i) {
        DpoRecord rec;
        rec.id = "toy" + std::to_string(i);
        rec.prompt = "q";
        rec.chosen = "good";
        rec.rejected = "bad";
        rec.source_id = "s" + std::to_string(i);
        records.push_back(std::move(rec));
    }
    return records;
}

double prob_of(const TrainOutput& out, Which which, const std::string& prompt,
               const std::string& completion) {
    const auto p = out.tokenizer.encode(prompt);
    const auto c = out.tokenizer.encode(completion);
    return std::exp(log_prob(out.model, which, p, c));
}

} // namespace

TEST_CASE("value is zero at the reference point") {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        ValueParams params;
        params.lambda = rng.uniform(0.5, 5.0);
        params.alpha = rng.uniform(0.05, 1.0);
        const double z0 = rng.uniform(-3.0, 3.0);
        CHECK(value(z0, params, z0) == 0.0);
    }
}

TEST_CASE("linear case applies loss aversion directly") {
    ValueParams params;
    params.lambda = 2.0;
    params.alpha = 1.0;
    CHECK(value(1.0, params, 0.0) == 1.0);
    CHECK(value(-1.0, params, 0.0) == -2.0);
}

TEST_CASE("square-root case") {
    ValueParams params;
    params.lambda = 1.0;
    params.alpha = 0.5;
    CHECK(value(0.25, params, 0.0) == 0.5);
}

TEST_CASE("mirror identity holds to machine precision") {
    Rng rng(42);
    for (int trial = 0; trial < 1000; ++trial) {
        ValueParams params;
        params.lambda = rng.uniform(1.0, 10.0);
        params.alpha = rng.uniform(0.05, 1.0);
        const double z0 = rng.uniform(-2.0, 2.0);
        const double delta = rng.uniform(1e-6, 4.0);
        const double lhs = -value(z0 - delta, params, z0);
        const double rhs = params.lambda * value(z0 + delta, params, z0);
        CHECK(std::abs(lhs - rhs) <= 1e-12);
    }
}

TEST_CASE("value is strictly increasing") {
    Rng rng(43);
    for (int trial = 0; trial < 1000; ++trial) {
        ValueParams params;
        params.lambda = rng.uniform(1.0, 10.0);
        params.alpha = rng.uniform(0.05, 1.0);
        const double z0 = rng.uniform(-2.0, 2.0);
        double z1 = z0 + rng.uniform(-4.0, 4.0);
        double z2 = z0 + rng.uniform(-4.0, 4.0);
        if (z1 == z2) {
            continue;
        }
        if (z1 > z2) {
            std::swap(z1, z2);
        }
        CHECK(value(z1, params, z0) < value(z2, params, z0));
    }
}

TEST_CASE("gains are midpoint concave for alpha below one") {
    Rng rng(44);
    for (int trial = 0; trial < 1000; ++trial) {
        ValueParams params;
        params.lambda = rng.uniform(1.0, 10.0);
        params.alpha = rng.uniform(0.05, 0.99);
        const double z0 = rng.uniform(-2.0, 2.0);
        const double a = z0 + rng.uniform(0.0, 4.0);
        const double b = z0 + rng.uniform(0.0, 4.0);
        const double mid = value(0.5 * (a + b), params, z0);
        const double avg = 0.5 * (value(a, params, z0) + value(b, params, z0));
        CHECK(mid >= avg);
    }
}

TEST_CASE("derivative clamps the singularity near the reference point") {
    ValueParams params;
    params.alpha = 0.5;
    params.grad_epsilon = 1e-6;
    const double at_z0 = value_derivative(0.0, params, 0.0);
    CHECK(std::isfinite(at_z0));
    CHECK(at_z0 == doctest::Approx(0.5 * std::pow(1e-6, -0.5)));
}

TEST_CASE("kto terms: reference-point loss equals lambda_y") {
    const ObjectiveConfig cfg = kto_config(KtoMode::paper_literal, 1.0);
    const KtoTerms t = kto_terms(0.0, true, 0.0, cfg);
    CHECK(t.utility == 0.0);
    CHECK(t.loss == 1.0);
}

TEST_CASE("kto terms: symmetric batch cancels to zero loss") {
    // Desirable at r=1 and undesirable at r=-1 both reflect to v(1)=1.
    const ObjectiveConfig cfg = kto_config(KtoMode::paper_literal, 1.0);
    const KtoTerms desirable = kto_terms(1.0, true, 0.0, cfg);
    const KtoTerms undesirable = kto_terms(-1.0, false, 0.0, cfg);
    CHECK(desirable.loss == 0.0);
    CHECK(undesirable.loss == 0.0);
    CHECK(0.5 * (desirable.loss + undesirable.loss) == 0.0);
}

TEST_CASE("kto terms: linear-region slope is exactly minus beta") {
    const ObjectiveConfig cfg = kto_config(KtoMode::paper_literal, 0.1);
    const KtoTerms t = kto_terms(5.0, true, 0.0, cfg);
    CHECK(t.dloss_dreward == -0.1);
}

TEST_CASE("kto terms: sigmoid mode at zero reward loses exactly one half") {
    const ObjectiveConfig cfg = kto_config(KtoMode::sigmoid);
    CHECK(kto_terms(0.0, true, 0.0, cfg).loss == 0.5);
    CHECK(kto_terms(0.0, false, 0.0, cfg).loss == 0.5);
}

TEST_CASE("kto_loss over a zero-delta model reproduces the trivial cases") {
    PolicyModel model = zero_lora_model(3);
    std::vector<KtoExample> batch = {{{0}, {1}, true}};

    ObjectiveConfig literal = kto_config(KtoMode::paper_literal);
    LossResult r = kto_loss(model, batch, literal);
    CHECK(r.loss == 1.0); // reward 0 sits at the reference point
    CHECK(r.z0_used == 0.0);

    ObjectiveConfig sig = kto_config(KtoMode::sigmoid);
    batch.push_back({{0}, {2}, false});
    r = kto_loss(model, batch, sig);
    CHECK(r.loss == 0.5);
    CHECK(r.n_desirable == 1);
    CHECK(r.n_undesirable == 1);
    CHECK(r.sum_reward_desirable == 0.0);
    CHECK(r.sum_reward_undesirable == 0.0);
}

TEST_CASE("batch_kl needs at least two examples") {
    PolicyModel model = zero_lora_model(3);
    ObjectiveConfig cfg = kto_config(KtoMode::sigmoid);
    cfg.value.z0_mode = Z0Mode::batch_kl;
    const std::vector<KtoExample> single = {{{0}, {1}, true}};
    try {
        kto_loss(model, single, cfg);
        FAIL("expected DegenerateBatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::degenerate_batch);
    }
    const std::vector<KtoExample> pair = {{{0}, {1}, true}, {{0}, {2}, false}};
    const LossResult r = kto_loss(model, pair, cfg);
    CHECK(r.z0_used == 0.0); // zero-delta model has zero mismatched rewards
}

TEST_CASE("dpo loss at zero margin is ln 2") {
    PolicyModel model = zero_lora_model(3);
    const std::vector<DpoExample> batch = {{{0}, {1}, {2}}};
    const LossResult r = dpo_loss(model, batch, 0.1);
    CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("dpo loss at margin ln 3 is ln(4/3)") {
    // With a uniform 2-token base row, logit delta x on token 0 makes the
    // margin between completions [0] and [1] exactly x.
    PolicyModel model = zero_lora_model(2);
    model.lora_a(0, 0) = 1.0;
    model.lora_b(0, 0) = std::log(3.0);
    const std::vector<DpoExample> batch = {{{0}, {0}, {1}}};
    const LossResult r = dpo_loss(model, batch, 1.0);
    CHECK(r.loss == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-12));
    CHECK(std::log(4.0 / 3.0) == doctest::Approx(0.2876820724517809).epsilon(1e-12));
}

TEST_CASE("swapped dpo losses sum to at least 2 ln 2") {
    Rng rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        PolicyModel model = zero_lora_model(2);
        model.lora_a(0, 0) = 1.0;
        model.lora_b(0, 0) = rng.uniform(-4.0, 4.0); // margin
        const std::vector<DpoExample> forward = {{{0}, {0}, {1}}};
        const std::vector<DpoExample> reversed = {{{0}, {1}, {0}}};
        const double sum = dpo_loss_value(model, forward, 1.0) +
                           dpo_loss_value(model, reversed, 1.0);
        CHECK(sum >= 2.0 * std::log(2.0) - 1e-12);
    }
    PolicyModel model = zero_lora_model(2);
    const std::vector<DpoExample> forward = {{{0}, {0}, {1}}};
    const std::vector<DpoExample> reversed = {{{0}, {1}, {0}}};
    const double sum =
        dpo_loss_value(model, forward, 1.0) + dpo_loss_value(model, reversed, 1.0);
    CHECK(sum == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("adam leaves parameters alone on zero gradients") {
    PolicyModel model = zero_lora_model(3);
    model.lora_a(0, 0) = 0.25;
    model.lora_b(2, 0) = -0.5;
    AdamState state = make_adam_state(model);
    const Matrix zero_a(1, 3), zero_b(3, 1);
    adam_step(model, state, zero_a, zero_b, 0.1, {});
    CHECK(model.lora_a(0, 0) == 0.25);
    CHECK(model.lora_b(2, 0) == -0.5);
    CHECK(state.step == 1);
}

TEST_CASE("adam moves by about lr per step under a constant unit gradient") {
    PolicyModel model = zero_lora_model(2);
    AdamState state = make_adam_state(model);
    Matrix g_a(1, 2), g_b(2, 1);
    g_a(0, 0) = 1.0;

    adam_step(model, state, g_a, g_b, 0.1, {});
    const double after_one = model.lora_a(0, 0);
    CHECK(std::abs(after_one + 0.1) < 1e-6);

    adam_step(model, state, g_a, g_b, 0.1, {});
    const double after_two = model.lora_a(0, 0);
    CHECK(std::abs((after_two - after_one) + 0.1) < 1e-6);
    // Untouched coordinates stay put.
    CHECK(model.lora_a(0, 1) == 0.0);
    CHECK(model.lora_b(1, 0) == 0.0);
}

TEST_CASE("adam rejects mismatched gradient shapes") {
    PolicyModel model = zero_lora_model(3);
    AdamState state = make_adam_state(model);
    const Matrix wrong(2, 2);
    CHECK_THROWS_AS(adam_step(model, state, wrong, wrong, 0.1, {}), Error);
}

TEST_CASE("cosine schedule hits its endpoints and midpoint") {
    TrainConfig cfg;
    cfg.lr = 0.05;
    cfg.total_steps = 100;
    CHECK(lr_at(0, cfg) == doctest::Approx(0.05).epsilon(1e-15));
    CHECK(lr_at(100, cfg) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(lr_at(50, cfg) == doctest::Approx(0.025).epsilon(1e-12));
    CHECK(lr_at(250, cfg) == doctest::Approx(0.0).epsilon(1e-12)); // clamped
}

TEST_CASE("toy kto training separates good from bad") {
    const ObjectiveConfig objective = kto_config(KtoMode::sigmoid);
    TrainConfig cfg;
    cfg.seed = 42;
    cfg.total_steps = 200;
    const TrainOutput out = train(toy_kto_corpus(), objective, cfg);

    REQUIRE(out.metrics.size() == 200);
    CHECK(out.metrics.front().step == 1);
    CHECK(out.metrics.back().step == 200);
    CHECK(out.metrics.back().reward_margin > 0.0);
    CHECK(out.metrics.back().loss < out.metrics.front().loss);

    CHECK(prob_of(out, Which::policy, "q", "good") >
          prob_of(out, Which::reference, "q", "good"));
    CHECK(prob_of(out, Which::policy, "q", "bad") <
          prob_of(out, Which::reference, "q", "bad"));
}

TEST_CASE("zero-step training returns the reference policy and no metrics") {
    const ObjectiveConfig objective = kto_config(KtoMode::sigmoid);
    TrainConfig cfg;
    cfg.total_steps = 0;
    const TrainOutput out = train(toy_kto_corpus(), objective, cfg);
    CHECK(out.metrics.empty());
    for (double v : out.model.lora_b.data) {
        CHECK(v == 0.0);
    }
    CHECK(prob_of(out, Which::policy, "q", "good") ==
          prob_of(out, Which::reference, "q", "good"));
}

TEST_CASE("training is deterministic for a fixed seed") {
    const ObjectiveConfig objective = kto_config(KtoMode::sigmoid);
    TrainConfig cfg;
    cfg.seed = 42;
    cfg.total_steps = 25;
    const TrainOutput a = train(toy_kto_corpus(), objective, cfg);
    const TrainOutput b = train(toy_kto_corpus(), objective, cfg);
    REQUIRE(a.metrics.size() == b.metrics.size());
    for (size_t i = 0; i < a.metrics.size(); ++i) {
        CHECK(a.metrics[i].loss == b.metrics[i].loss);
        CHECK(a.metrics[i].reward_margin == b.metrics[i].reward_margin);
        CHECK(a.metrics[i].lr == b.metrics[i].lr);
    }
    CHECK(a.model.lora_b.data == b.model.lora_b.data);
}

TEST_CASE("dpo training drives the pairwise loss down") {
    ObjectiveConfig objective;
    objective.objective = Objective::dpo;
    objective.beta = 0.1;
    TrainConfig cfg;
    cfg.seed = 42;
    cfg.total_steps = 100;
    const TrainOutput out = train(toy_dpo_corpus(), objective, cfg);
    REQUIRE(out.metrics.size() == 100);
    CHECK(out.metrics.back().loss < out.metrics.front().loss);
    CHECK(out.metrics.back().reward_margin > 0.0);
}

TEST_CASE("objective and record shapes must agree") {
    ObjectiveConfig dpo_cfg;
    dpo_cfg.objective = Objective::dpo;
    TrainConfig cfg;
    CHECK_THROWS_AS(train(toy_kto_corpus(), dpo_cfg, cfg), Error);
    ObjectiveConfig kto_cfg;
    kto_cfg.objective = Objective::kto;
    CHECK_THROWS_AS(train(toy_dpo_corpus(), kto_cfg, cfg), Error);
}

TEST_CASE("metrics serialize one JSON object per step") {
    const ObjectiveConfig objective = kto_config(KtoMode::sigmoid);
    TrainConfig cfg;
    cfg.total_steps = 5;
    const TrainOutput out = train(toy_kto_corpus(), objective, cfg);
    const auto path = std::filesystem::temp_directory_path() / "seapo_metrics.jsonl";
    write_metrics(path.string(), out.metrics);

    std::ifstream in(path);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        ++lines;
        CHECK(line.find("\"step\"") != std::string::npos);
        CHECK(line.find("\"lr\"") != std::string::npos);
        CHECK(line.find("\"loss\"") != std::string::npos);
        CHECK(line.find("\"mean_reward_desirable\"") != std::string::npos);
        CHECK(line.find("\"mean_reward_undesirable\"") != std::string::npos);
        CHECK(line.find("\"reward_margin\"") != std::string::npos);
    }
    CHECK(lines == 5);
    std::filesystem::remove(path);
}

TEST_CASE("value params validation and regime flag") {
    ValueParams params;
    CHECK_NOTHROW(validate(params));
    CHECK(prospect_regime(params));
    params.lambda = 0.5;
    CHECK_NOTHROW(validate(params));
    CHECK_FALSE(prospect_regime(params));
    params.lambda = -1.0;
    CHECK_THROWS_AS(validate(params), Error);
    params = ValueParams{};
    params.alpha = 0.0;
    CHECK_THROWS_AS(validate(params), Error);
}
