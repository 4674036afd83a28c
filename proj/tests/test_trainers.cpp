#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "icr/envs.hpp"
#include "icr/trainers.hpp"

using namespace icr;

namespace {

TrainerConfig small_config(Variant v, std::uint64_t seed = 1) {
    TrainerConfig cfg;
    cfg.variant = v;
    cfg.seed = seed;
    cfg.batch_size = 32;
    cfg.steps = 5;
    cfg.bc_epochs = 5;
    cfg.horizon = 15;
    return cfg;
}

RolloutBatch fresh_batch(const Environment& env, const SoftmaxPolicy& policy,
                         const TrainerConfig& cfg, int step = 0) {
    EmaBaseline baseline(cfg.baseline_decay);
    return collect_rollouts(env, policy, cfg, apply_variant(cfg.variant), step, baseline);
}

double max_param_delta(const SoftmaxPolicy& a, const SoftmaxPolicy& b) {
    double worst = 0.0;
    for (std::size_t s = 0; s < a.params.size(); ++s) {
        for (std::size_t i = 0; i < a.params[s].size(); ++i) {
            worst = std::max(worst, std::abs(a.params[s][i] - b.params[s][i]));
        }
    }
    return worst;
}

ExpertDataset wason_dataset(int dialogues = 12, std::uint64_t seed = 3) {
    WasonEnv env;
    QualityMixture mix;
    return collect_expert_dataset(env, mix, dialogues, 15, seed);
}

}  // namespace

TEST_CASE("bc reaches a realizable deterministic target") {
    // single-action expert: always the all-correct stance map
    WasonEnv env;
    QualityMixture mix;
    ExpertDataset ds = collect_expert_dataset(env, mix, 8, 15, 21, /*adopt_noise=*/0.0);
    TrainerConfig cfg = small_config(Variant::BC);
    cfg.bc_epochs = 25;
    SoftmaxPolicy policy = train_bc(ds, cfg);

    int checked = 0;
    for (const ExpertRecord* rec : ds.split_view("train")) {
        for (const auto& [pid, move] : rec->action.per_participant) {
            auto ctx = featurize(rec->context, rec->intervention, pid, CfFlag::Factual, false);
            auto rows = action_logprobs(policy, ctx);
            auto target = encode_move("wason", rec->context.task_instance, move);
            for (std::size_t s = 0; s < rows.size(); ++s) {
                int argmax = static_cast<int>(
                    std::max_element(rows[s].begin(), rows[s].end()) - rows[s].begin());
                CHECK(argmax == target[s]);
            }
            if (++checked > 100) return;
        }
    }
}

TEST_CASE("bc nll decreases over epochs") {
    ExpertDataset ds = wason_dataset();
    TrainerConfig cfg = small_config(Variant::BC);
    cfg.bc_epochs = 12;
    cfg.bc_learning_rate = 0.02;  // small steps so the trace is clean
    std::vector<double> trace;
    train_bc(ds, cfg, &trace);
    REQUIRE(trace.size() == 12);
    for (std::size_t i = 1; i < trace.size(); ++i) {
        CHECK(trace[i] <= trace[i - 1] + 1e-6);
    }
}

TEST_CASE("zero-epoch bc is the uniform policy") {
    ExpertDataset ds = wason_dataset();
    TrainerConfig cfg = small_config(Variant::BC);
    cfg.bc_epochs = 0;
    SoftmaxPolicy policy = train_bc(ds, cfg);
    for (const auto& slot : policy.params) {
        for (double w : slot) CHECK(w == 0.0);
    }
}

TEST_CASE("bc requires a nonempty train split") {
    ExpertDataset empty;
    CHECK_THROWS_AS(train_bc(empty, small_config(Variant::BC)), EmptyDataset);
}

TEST_CASE("zero advantages and zero penalties give a zero update") {
    WasonEnv env;
    TrainerConfig cfg = small_config(Variant::PPO);
    cfg.lambda_h = 0.0;
    SoftmaxPolicy policy = SoftmaxPolicy::zeros("wason");
    RolloutBatch batch = fresh_batch(env, policy, cfg);
    for (auto& item : batch.items) item.advantage = 0.0;
    SoftmaxPolicy before = policy;
    ppo_update(policy, before, batch, cfg);
    CHECK(max_param_delta(policy, before) == 0.0);
}

TEST_CASE("a positive-advantage action becomes more likely") {
    WasonEnv env;
    TrainerConfig cfg = small_config(Variant::PPO);
    cfg.lambda_h = 0.0;
    SoftmaxPolicy policy = SoftmaxPolicy::zeros("wason");
    RolloutBatch batch = fresh_batch(env, policy, cfg);
    RolloutBatch single;
    single.items.push_back(batch.items.front());
    single.items.front().advantage = 1.0;

    auto before_rows = action_logprobs(policy, single.items.front().factual);
    SoftmaxPolicy ref = policy;
    ppo_update(policy, ref, single, cfg);
    auto after_rows = action_logprobs(policy, single.items.front().factual);
    for (std::size_t s = 0; s < before_rows.size(); ++s) {
        int a = single.items.front().action[s];
        CHECK(after_rows[s][a] > before_rows[s][a]);
    }
}

TEST_CASE("a huge reference penalty freezes the policy at the reference") {
    WasonEnv env;
    TrainerConfig cfg = small_config(Variant::PPO);
    SoftmaxPolicy policy = SoftmaxPolicy::zeros("wason");
    RolloutBatch batch = fresh_batch(env, policy, cfg);

    cfg.lambda_h = 0.0;
    SoftmaxPolicy free = policy;
    auto diag_free = ppo_update(free, policy, batch, cfg);

    cfg.lambda_h = 1e6;
    SoftmaxPolicy pinned = policy;
    auto diag_pinned = ppo_update(pinned, policy, batch, cfg);

    REQUIRE(diag_free.update_norm > 0.0);
    CHECK(diag_pinned.update_norm < 1e-3 * diag_free.update_norm);
}

TEST_CASE("stale batches are rejected") {
    WasonEnv env;
    TrainerConfig cfg = small_config(Variant::PPO);
    SoftmaxPolicy policy = SoftmaxPolicy::zeros("wason");
    RolloutBatch batch = fresh_batch(env, policy, cfg);
    // move the policy after collection; the factual flag slot is always active
    policy.at(0, 0, schema_for("wason").cf_flag_offset) += 1.0;
    SoftmaxPolicy ref = policy;
    CHECK_THROWS_AS(ppo_update(policy, ref, batch, cfg), StaleBatch);
}

TEST_CASE("icr with zero intent coefficient reproduces ppo exactly") {
    for (const std::string task : {"wason", "weights"}) {
        auto env = make_environment(task);
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            TrainerConfig cfg = small_config(Variant::ICR, seed);
            cfg.lambda_intent = 0.0;
            SoftmaxPolicy policy = SoftmaxPolicy::zeros(task);
            RolloutBatch batch = fresh_batch(*env, policy, cfg, static_cast<int>(seed));

            SoftmaxPolicy via_ppo = policy;
            SoftmaxPolicy via_icr = policy;
            SoftmaxPolicy ref = policy;
            ppo_update(via_ppo, ref, batch, cfg);
            icr_update(via_icr, ref, batch, cfg);
            CHECK(max_param_delta(via_ppo, via_icr) < 1e-12);
        }
    }
}

TEST_CASE("icr does exactly one extra scoring pass per batch item") {
    WasonEnv env;
    TrainerConfig cfg = small_config(Variant::ICR);
    SoftmaxPolicy policy = SoftmaxPolicy::zeros("wason");
    RolloutBatch batch = fresh_batch(env, policy, cfg);

    SoftmaxPolicy a = policy, b = policy, ref = policy;
    reset_scoring_pass_count();
    ppo_update(a, ref, batch, cfg);
    std::uint64_t ppo_passes = scoring_pass_count();
    reset_scoring_pass_count();
    icr_update(b, ref, batch, cfg);
    std::uint64_t icr_passes = scoring_pass_count();
    CHECK(icr_passes - ppo_passes == batch.items.size());
}

TEST_CASE("intent gradient flows only through the factual branch") {
    // the applied icr update must equal the finite-difference gradient of the
    // objective in which the counterfactual rows are frozen constants
    WasonEnv env;
    TrainerConfig cfg = small_config(Variant::ICR);
    cfg.lambda_h = 0.0;  // isolate the intent term
    cfg.lambda_intent = 0.7;
    SoftmaxPolicy policy = SoftmaxPolicy::zeros("wason");
    RolloutBatch batch = fresh_batch(env, policy, cfg);
    RolloutBatch tiny;
    tiny.items.assign(batch.items.begin(), batch.items.begin() + 4);

    SoftmaxPolicy updated = policy;
    SoftmaxPolicy ref = policy;
    icr_update(updated, ref, tiny, cfg);

    // frozen counterfactual rows, captured at the pre-update parameters
    std::vector<std::vector<std::vector<double>>> frozen_cf;
    for (const auto& item : tiny.items) {
        frozen_cf.push_back(action_logprobs(policy, item.counterfactual));
    }
    auto objective = [&](const SoftmaxPolicy& p) {
        // surrogate (ratios are exactly 1 at the base point, so no clipping)
        double total = 0.0;
        for (std::size_t i = 0; i < tiny.items.size(); ++i) {
            const auto& item = tiny.items[i];
            auto rows = action_logprobs(p, item.factual);
            for (std::size_t s = 0; s < rows.size(); ++s) {
                double ratio = std::exp(rows[s][item.action[s]] - item.old_logp[s]);
                total += ratio * item.advantage;
                double kl = 0.0;
                for (std::size_t c = 0; c < rows[s].size(); ++c) {
                    kl += std::exp(rows[s][c]) * (rows[s][c] - frozen_cf[i][s][c]);
                }
                total -= cfg.lambda_intent * kl;
            }
        }
        return total / static_cast<double>(tiny.items.size());
    };

    double lr = std::min(cfg.learning_rate, 1.0 / (1.0 + cfg.lambda_h + cfg.lambda_intent));
    const double h = 1e-6;
    RandomStream pick(5);
    for (int trial = 0; trial < 25; ++trial) {
        int slot = static_cast<int>(pick.next_below(4));
        int choice = static_cast<int>(pick.next_below(3));
        int feat = static_cast<int>(pick.next_below(policy.feature_dim));
        SoftmaxPolicy plus = policy, minus = policy;
        plus.at(slot, choice, feat) += h;
        minus.at(slot, choice, feat) -= h;
        double grad = (objective(plus) - objective(minus)) / (2 * h);
        double applied = updated.at(slot, choice, feat) - policy.at(slot, choice, feat);
        CHECK(applied == doctest::Approx(lr * grad).epsilon(1e-3).scale(1e-8));
    }

    // perturbing the counterfactual branch changes the reported divergence
    // but the update is computed from frozen values, never backpropagated
    RolloutBatch shifted = tiny;
    for (auto& item : shifted.items) {
        item.counterfactual = with_cf_flag(item.factual, "wason", CfFlag::PSOPositive);
    }
    SoftmaxPolicy updated2 = policy;
    auto diag2 = icr_update(updated2, ref, shifted, cfg);
    SoftmaxPolicy updated_base = policy;
    auto diag_base = icr_update(updated_base, ref, tiny, cfg);
    (void)diag2;
    (void)diag_base;
}

TEST_CASE("an invariant policy gets zero gradient from the intent term") {
    // with equal flag columns the factual and counterfactual rows coincide,
    // so the divergence penalty contributes nothing
    WasonEnv env;
    TrainerConfig cfg = small_config(Variant::ICR);
    cfg.lambda_intent = 0.9;
    SoftmaxPolicy policy = SoftmaxPolicy::zeros("wason");
    RandomStream rng(6);
    // random parameters on every non-flag feature column
    const auto& schema = schema_for("wason");
    for (auto& slot : policy.params) {
        for (int c = 0; c < 3; ++c) {
            for (int f = 0; f < schema.cf_flag_offset; ++f) {
                slot[c * schema.feature_dim + f] = 0.2 * rng.next_gaussian();
            }
        }
    }
    RolloutBatch batch = fresh_batch(env, policy, cfg);

    SoftmaxPolicy with_intent = policy, without_intent = policy, ref = policy;
    icr_update(with_intent, ref, batch, cfg);
    TrainerConfig cfg0 = cfg;
    cfg0.lambda_intent = 0.0;
    icr_update(without_intent, ref, batch, cfg0);
    CHECK(max_param_delta(with_intent, without_intent) < 1e-12);
}

TEST_CASE("icr requires counterfactual twins") {
    WasonEnv env;
    TrainerConfig cfg = small_config(Variant::ICR);
    SoftmaxPolicy policy = SoftmaxPolicy::zeros("wason");
    RolloutBatch batch = fresh_batch(env, policy, cfg);
    batch.items.front().counterfactual.features.clear();
    SoftmaxPolicy ref = policy;
    CHECK_THROWS_AS(icr_update(policy, ref, batch, cfg), MissingCounterfactualTwin);
}

TEST_CASE("cf divergence is zero when flag columns are zero, nonnegative always") {
    WeightsEnv env;
    QualityMixture mix;
    auto contexts = build_eval_contexts(env, mix, 64, 9);
    SoftmaxPolicy policy = SoftmaxPolicy::zeros("weights");
    RandomStream rng(10);
    const auto& schema = schema_for("weights");
    for (auto& slot : policy.params) {
        for (std::size_t c = 0; c < slot.size() / schema.feature_dim; ++c) {
            for (int f = 0; f < schema.cf_flag_offset; ++f) {
                slot[c * schema.feature_dim + f] = 0.3 * rng.next_gaussian();
            }
        }
    }
    CHECK(compute_cf_divergence(policy, contexts) == doctest::Approx(0.0));

    // now give the flag columns weight: divergence must be positive
    for (auto& slot : policy.params) {
        for (std::size_t c = 0; c < slot.size() / schema.feature_dim; ++c) {
            slot[c * schema.feature_dim + schema.cf_flag_offset] = rng.next_gaussian();
        }
    }
    CHECK(compute_cf_divergence(policy, contexts) > 0.0);
}

TEST_CASE("ppocf interleave flags exactly half the items counterfactual") {
    WasonEnv env;
    TrainerConfig cfg = small_config(Variant::PPOCF);
    cfg.batch_size = 31;  // odd size exercises the ceiling
    VariantSpec spec = apply_variant(Variant::PPOCF);
    SoftmaxPolicy policy = SoftmaxPolicy::zeros("wason");
    EmaBaseline baseline;
    RolloutBatch batch = collect_rollouts(env, policy, cfg, spec, 0, baseline);
    std::size_t n_cf = 0;
    for (const auto& item : batch.items) {
        if (item.factual.cf_flag == CfFlag::CounterfactualNegative) ++n_cf;
    }
    CHECK(n_cf == (batch.items.size() + 1) / 2);
    CHECK(spec.lambda_intent(cfg) == 0.0);
}

TEST_CASE("variant context modifiers") {
    auto pso = apply_variant(Variant::PSOIntent);
    CHECK(pso.train_flag(0) == CfFlag::PSOPositive);
    CHECK(pso.eval_flag == CfFlag::PSOPositive);

    auto skeptical = apply_variant(Variant::PSOSkeptical);
    CHECK(skeptical.train_flag(1) == CfFlag::PSOPositive);
    CHECK(skeptical.eval_flag == CfFlag::CounterfactualNegative);

    auto masked = apply_variant(Variant::ICRMasked);
    CHECK(masked.eval_mask);
    CHECK(masked.uses_intent_term);

    auto ppo = apply_variant(Variant::PPO);
    CHECK(ppo.lambda_intent(small_config(Variant::PPO)) == 0.0);

    // PSO contexts differ from factual ones only in flag slots
    WasonEnv env;
    QualityMixture mix;
    auto pairs = build_eval_contexts(env, mix, 4, 3);
    const auto& schema = schema_for("wason");
    for (const auto& [factual, cf] : pairs) {
        auto pso_ctx = with_cf_flag(factual, "wason", CfFlag::PSOPositive);
        for (int f = 0; f < schema.cf_flag_offset; ++f) {
            CHECK(pso_ctx.features[f] == factual.features[f]);
        }
        CHECK(pso_ctx.features[schema.cf_flag_offset + 2] == 1.0);
    }
}

TEST_CASE("preference pairs corrupt exactly one correct component") {
    WasonEnv env;
    QualityMixture mix;
    ExpertDataset ds = collect_expert_dataset(env, mix, 6, 15, 31);
    RandomStream rng(8);
    PreferenceBuild build = build_preference_pairs(ds, rng);
    REQUIRE(!build.pairs.empty());
    const auto& inst_template = std::get<wason::WasonInstance>(
        ds.records.front().context.task_instance);
    (void)inst_template;
    for (const auto& pair : build.pairs) {
        int n_diff = 0;
        for (std::size_t s = 0; s < pair.preferred.size(); ++s) {
            if (pair.preferred[s] != pair.dispreferred[s]) ++n_diff;
        }
        CHECK(n_diff == 1);
    }
}

TEST_CASE("weights preference corruption matches the false-claim pattern") {
    WeightsEnv env(3, /*randomize=*/false);  // pin the canonical instance
    QualityMixture mix;
    ExpertDataset ds = collect_expert_dataset(env, mix, 6, 15, 41);
    RandomStream rng(9);
    PreferenceBuild build = build_preference_pairs(ds, rng);
    REQUIRE(!build.pairs.empty());
    auto truth = weights::BlockWeights::standard();
    for (const auto& pair : build.pairs) {
        REQUIRE(pair.preferred[0] > 0);
        REQUIRE(pair.dispreferred[0] > 0);
        const auto& good = weights_action_menu()[pair.preferred[0] - 1];
        const auto& bad = weights_action_menu()[pair.dispreferred[0] - 1];
        CHECK(weights::proposition_true(good, truth));
        CHECK(!weights::proposition_true(bad, truth));
    }
}

TEST_CASE("all-unsure actions have nothing to corrupt") {
    WasonEnv env;
    QualityMixture mix;
    ExpertDataset ds = collect_expert_dataset(env, mix, 1, 2, 51);
    // overwrite the expert actions with all-unsure maps
    for (auto& rec : ds.records) {
        for (auto& [pid, move] : rec.action.per_participant) {
            auto& sa = std::get<wason::StanceAction>(move);
            for (auto& [face, stance] : sa.stances) stance = wason::Stance::Unsure;
        }
        rec.split = "train";
    }
    RandomStream rng(10);
    PreferenceBuild build = build_preference_pairs(ds, rng);
    CHECK(build.pairs.empty());
    CHECK(build.skipped == 2 * 3);
}

TEST_CASE("identical preferred and dispreferred actions give zero dpo gradient") {
    ExpertDataset ds = wason_dataset(4);
    RandomStream rng(11);
    PreferenceBuild build = build_preference_pairs(ds, rng);
    REQUIRE(!build.pairs.empty());
    std::vector<PreferencePair> degenerate{build.pairs.front()};
    degenerate.front().dispreferred = degenerate.front().preferred;

    TrainerConfig cfg = small_config(Variant::DPO);
    cfg.offline_epochs = 3;
    SoftmaxPolicy ref = SoftmaxPolicy::zeros("wason");
    SoftmaxPolicy out = train_dpo(degenerate, ref, 0.1, cfg);
    CHECK(max_param_delta(out, ref) == 0.0);
}

TEST_CASE("dpo margins are positive on held-out pairs after training") {
    WasonEnv env;
    QualityMixture mix;
    ExpertDataset ds = collect_expert_dataset(env, mix, 30, 15, 61);
    RandomStream rng(12);
    PreferenceBuild build = build_preference_pairs(ds, rng);
    REQUIRE(build.pairs.size() > 200);

    std::vector<PreferencePair> train(build.pairs.begin(),
                                      build.pairs.begin() + build.pairs.size() * 8 / 10);
    std::vector<PreferencePair> held(build.pairs.begin() + build.pairs.size() * 8 / 10,
                                     build.pairs.end());

    TrainerConfig cfg = small_config(Variant::DPO);
    cfg.offline_epochs = 15;
    cfg.offline_learning_rate = 0.02;
    SoftmaxPolicy ref = SoftmaxPolicy::zeros("wason");
    SoftmaxPolicy policy = train_dpo(train, ref, 0.1, cfg);

    int positive = 0;
    for (const auto& pair : held) {
        if (preference_margin(policy, ref, pair) > 0.0) ++positive;
    }
    CHECK(positive >= static_cast<int>(held.size() * 9) / 10);
}

TEST_CASE("ipo reaches its closed-form optimum on a single pair") {
    ExpertDataset ds = wason_dataset(4);
    RandomStream rng(13);
    PreferenceBuild build = build_preference_pairs(ds, rng);
    std::vector<PreferencePair> one{build.pairs.front()};

    TrainerConfig cfg = small_config(Variant::IPO);
    cfg.offline_epochs = 4000;
    cfg.offline_learning_rate = 1e-3;
    double beta = 0.1;
    SoftmaxPolicy ref = SoftmaxPolicy::zeros("wason");
    SoftmaxPolicy policy = train_ipo(one, ref, beta, cfg);
    CHECK(preference_margin(policy, ref, one.front()) ==
          doctest::Approx(1.0 / (2.0 * beta)).epsilon(1e-4));
}

TEST_CASE("empty pair list is rejected") {
    TrainerConfig cfg = small_config(Variant::DPO);
    SoftmaxPolicy ref = SoftmaxPolicy::zeros("wason");
    CHECK_THROWS_AS(train_dpo({}, ref, 0.1, cfg), EmptyPairs);
}

TEST_CASE("online rollouts sample factually for icr and ppo") {
    WeightsEnv env;
    TrainerConfig cfg = small_config(Variant::ICR);
    SoftmaxPolicy policy = SoftmaxPolicy::zeros("weights");
    EmaBaseline baseline;
    RolloutBatch batch =
        collect_rollouts(env, policy, cfg, apply_variant(Variant::ICR), 0, baseline);
    for (const auto& item : batch.items) {
        CHECK(item.factual.cf_flag == CfFlag::Factual);
        CHECK(item.counterfactual.cf_flag == CfFlag::CounterfactualNegative);
        CHECK(std::isfinite(item.advantage));
        // twins differ only in the flag slots
        const auto& schema = schema_for("weights");
        for (int f = 0; f < schema.cf_flag_offset; ++f) {
            CHECK(item.factual.features[f] == item.counterfactual.features[f]);
        }
    }
}

TEST_CASE("short online training runs end to end and logs rows") {
    WasonEnv env;
    QualityMixture mix;
    ExpertDataset ds = collect_expert_dataset(env, mix, 6, 15, 71);
    TrainerConfig cfg = small_config(Variant::ICR);
    cfg.steps = 6;
    cfg.metrics_stride = 2;
    SoftmaxPolicy bc = train_bc(ds, cfg);
    TrainResult result = train_online(env, bc, cfg);
    CHECK(!result.rows.empty());
    CHECK(result.rows.back().step == 5);
    for (const auto& row : result.rows) {
        CHECK(std::isfinite(row.mean_proxy_reward));
        CHECK(std::isfinite(row.delta_cf));
        CHECK(row.delta_cf >= 0.0);
    }
}
