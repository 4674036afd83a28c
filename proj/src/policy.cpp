#include "icr/policy.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace icr {

using nlohmann::json;

namespace {

std::atomic<std::uint64_t> g_scoring_passes{0};

constexpr int kTurnBuckets = 4;
constexpr int kStanceChoices = 3;  // support, oppose, unsure

// per-card block: category one-hot(4) + own stance one-hot(4: none/S/O/U) +
// others' support fraction(1) + suggested stance for this card(3)
constexpr int kWasonPerCard = 12;
// globals: suggested stance one-hot(3) + suggestion-redundant(1) +
// first-turn flag(1) + turn bucket(4) + cf flag(3)
constexpr int kWasonGlobals = 3 + 1 + 1 + kTurnBuckets + 3;

// per-candidate block: suggested + already-mine + derivable + contradicts +
// held-by-majority-of-others
constexpr int kWeightsPerCandidate = 5;
// globals: has-suggestion(1) + suggestion kind one-hot(3) +
// suggestion-fresh-to-me(1) + first-turn flag(1) + turn bucket(4) + cf flag(3)
constexpr int kWeightsGlobals = 1 + 3 + 1 + 1 + kTurnBuckets + 3;

int turn_bucket(int turn_index, int nominal_horizon = 15) {
    int b = (turn_index * kTurnBuckets) / std::max(1, nominal_horizon);
    return std::clamp(b, 0, kTurnBuckets - 1);
}

}  // namespace

const std::vector<weights::Proposition>& weights_action_menu() {
    return weights::assertion_menu();
}

int weights_menu_index(const weights::Proposition& p) {
    return weights::assertion_menu_index(p);
}

const FeatureSchema& schema_for(const std::string& task) {
    static const FeatureSchema wason_schema = [] {
        FeatureSchema s;
        s.task = "wason";
        s.feature_dim = 4 * kWasonPerCard + kWasonGlobals;
        s.choices_per_slot = {kStanceChoices, kStanceChoices, kStanceChoices, kStanceChoices};
        s.cf_flag_offset = s.feature_dim - 3;
        std::uint64_t h = fnv1a("wason-v2");
        h = fnv1a_u64(static_cast<std::uint64_t>(s.feature_dim), h);
        for (int c : s.choices_per_slot) h = fnv1a_u64(static_cast<std::uint64_t>(c), h);
        s.hash = h;
        return s;
    }();
    static const FeatureSchema weights_schema = [] {
        FeatureSchema s;
        s.task = "weights";
        int n_menu = static_cast<int>(weights_action_menu().size());
        s.feature_dim = n_menu * kWeightsPerCandidate + kWeightsGlobals;
        s.choices_per_slot = {n_menu + 1};  // abstain + menu
        s.cf_flag_offset = s.feature_dim - 3;
        std::uint64_t h = fnv1a("weights-v2");
        h = fnv1a_u64(static_cast<std::uint64_t>(s.feature_dim), h);
        for (const auto& p : weights_action_menu()) h = fnv1a(p.text(), h);
        s.hash = h;
        return s;
    }();
    if (task == "wason") return wason_schema;
    if (task == "weights") return weights_schema;
    throw ConfigError("unknown task: " + task);
}

namespace {

void write_cf_flag(std::vector<double>& x, int offset, CfFlag flag) {
    x[offset + 0] = flag == CfFlag::Factual ? 1.0 : 0.0;
    x[offset + 1] = flag == CfFlag::CounterfactualNegative ? 1.0 : 0.0;
    x[offset + 2] = flag == CfFlag::PSOPositive ? 1.0 : 0.0;
}

ConditionedContext featurize_wason(const DialogueState& state,
                                   const InterventionAction& intervention, int participant,
                                   CfFlag cf_flag, bool mask) {
    const auto& schema = schema_for("wason");
    const auto& inst = std::get<wason::WasonInstance>(state.task_instance);
    const auto& suggestion = std::get<WasonSuggestion>(intervention.payload);

    ConditionedContext ctx;
    ctx.cf_flag = cf_flag;
    ctx.mask_intervention = mask;
    ctx.features.assign(schema.feature_dim, 0.0);
    auto& x = ctx.features;

    auto my_stances = wason_view::stance_state(state, participant);
    int n_others = std::max<int>(1, static_cast<int>(state.participants.size()) - 1);

    for (int j = 0; j < 4; ++j) {
        char face = inst.faces[j];
        int base = j * kWasonPerCard;
        x[base + static_cast<int>(wason::classify_card(face))] = 1.0;
        auto it = my_stances.find(face);
        int stance_slot = it == my_stances.end() ? 0 : 1 + static_cast<int>(it->second);
        x[base + 4 + stance_slot] = 1.0;
        int support_votes = 0;
        for (const auto& p : state.participants) {
            if (p.index == participant) continue;
            if (wason_view::supported_cards(state, p.index).count(face)) ++support_votes;
        }
        x[base + 8] = static_cast<double>(support_votes) / n_others;
        if (!mask && suggestion.face == face) {
            x[base + 9 + static_cast<int>(suggestion.stance)] = 1.0;
        }
    }

    int g = 4 * kWasonPerCard;
    if (!mask) {
        x[g + static_cast<int>(suggestion.stance)] = 1.0;
        auto it = my_stances.find(suggestion.face);
        bool redundant = it != my_stances.end() && it->second == suggestion.stance;
        x[g + 3] = redundant ? 1.0 : 0.0;
    }
    x[g + 4] = state.turn_index == 0 ? 1.0 : 0.0;
    x[g + 5 + turn_bucket(state.turn_index)] = 1.0;
    write_cf_flag(x, schema.cf_flag_offset, cf_flag);
    return ctx;
}

ConditionedContext featurize_weights(const DialogueState& state,
                                     const InterventionAction& intervention, int participant,
                                     CfFlag cf_flag, bool mask) {
    const auto& schema = schema_for("weights");
    const auto& truth = std::get<weights::BlockWeights>(state.task_instance);
    const auto& suggestion = std::get<WeightsSuggestion>(intervention.payload);
    const auto& menu = weights_action_menu();

    ConditionedContext ctx;
    ctx.cf_flag = cf_flag;
    ctx.mask_intervention = mask;
    ctx.features.assign(schema.feature_dim, 0.0);
    auto& x = ctx.features;

    auto mine = weights_view::asserted_props(state, participant);
    weights::BeliefDeduction deduction(mine, truth);

    // how many other participants have asserted each proposition
    std::map<weights::Proposition, int> other_counts;
    for (const auto& p : state.participants) {
        if (p.index == participant) continue;
        for (const auto& prop : weights_view::asserted_props(state, p.index)) {
            other_counts[prop]++;
        }
    }
    int majority = std::max<int>(1, (static_cast<int>(state.participants.size()) - 1) / 2 + 1);

    int sugg_idx = mask ? -1 : weights_menu_index(suggestion.prop);
    for (std::size_t k = 0; k < menu.size(); ++k) {
        int base = static_cast<int>(k) * kWeightsPerCandidate;
        const auto& prop = menu[k];
        if (static_cast<int>(k) == sugg_idx) x[base + 0] = 1.0;
        if (mine.count(prop)) x[base + 1] = 1.0;
        if (deduction.consistent() && deduction.entails(prop)) x[base + 2] = 1.0;
        if (deduction.consistent() && deduction.contradicts(prop)) x[base + 3] = 1.0;
        auto it = other_counts.find(prop);
        if (it != other_counts.end() && it->second >= majority) x[base + 4] = 1.0;
    }

    int g = static_cast<int>(menu.size()) * kWeightsPerCandidate;
    if (!mask) {
        x[g + 0] = 1.0;
        x[g + 1 + static_cast<int>(suggestion.prop.kind)] = 1.0;
        x[g + 4] = mine.count(suggestion.prop) ? 0.0 : 1.0;
    }
    x[g + 5] = state.turn_index == 0 ? 1.0 : 0.0;
    x[g + 6 + turn_bucket(state.turn_index)] = 1.0;
    write_cf_flag(x, schema.cf_flag_offset, cf_flag);
    return ctx;
}

}  // namespace

ConditionedContext featurize(const DialogueState& state, const InterventionAction& intervention,
                             int participant, CfFlag cf_flag, bool mask_intervention) {
    if (std::holds_alternative<wason::WasonInstance>(state.task_instance)) {
        return featurize_wason(state, intervention, participant, cf_flag, mask_intervention);
    }
    return featurize_weights(state, intervention, participant, cf_flag, mask_intervention);
}

ConditionedContext with_cf_flag(const ConditionedContext& ctx, const std::string& task,
                                CfFlag flag) {
    ConditionedContext out = ctx;
    out.cf_flag = flag;
    write_cf_flag(out.features, schema_for(task).cf_flag_offset, flag);
    return out;
}

SoftmaxPolicy SoftmaxPolicy::zeros(const std::string& task, double temperature) {
    const auto& schema = schema_for(task);
    SoftmaxPolicy p;
    p.task = task;
    p.feature_dim = schema.feature_dim;
    p.choices_per_slot = schema.choices_per_slot;
    p.temperature = temperature;
    p.schema_hash = schema.hash;
    for (int c : p.choices_per_slot) {
        p.params.emplace_back(static_cast<std::size_t>(c) * schema.feature_dim, 0.0);
    }
    return p;
}

namespace {

/// Scores one slot: logits[choice] = params_row . x / temperature.
/// Skips zero features; contexts here are sparse.
void slot_logits(const SoftmaxPolicy& policy, int slot, const std::vector<double>& x,
                 std::vector<double>& out) {
    int n = policy.choices_per_slot[slot];
    int d = policy.feature_dim;
    out.assign(n, 0.0);
    const double* w = policy.params[slot].data();
    for (int f = 0; f < d; ++f) {
        double xf = x[f];
        if (xf == 0.0) continue;
        for (int c = 0; c < n; ++c) {
            out[c] += w[c * d + f] * xf;
        }
    }
    double inv_t = 1.0 / policy.temperature;
    for (int c = 0; c < n; ++c) {
        out[c] *= inv_t;
        if (!std::isfinite(out[c])) throw NonFiniteScore("non-finite logit");
    }
}

void log_softmax_inplace(std::vector<double>& logits) {
    double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    double lse = mx + std::log(sum);
    for (double& v : logits) v -= lse;
}

}  // namespace

std::vector<std::vector<double>> action_logprobs(const SoftmaxPolicy& policy,
                                                 const ConditionedContext& ctx) {
    if (static_cast<int>(ctx.features.size()) != policy.feature_dim) {
        throw IcrError("feature dimension mismatch");
    }
    g_scoring_passes.fetch_add(1, std::memory_order_relaxed);
    std::vector<std::vector<double>> rows(policy.n_slots());
    for (int s = 0; s < policy.n_slots(); ++s) {
        slot_logits(policy, s, ctx.features, rows[s]);
        log_softmax_inplace(rows[s]);
    }
    return rows;
}

std::pair<std::vector<int>, ActionLogProb> sample_action(const SoftmaxPolicy& policy,
                                                         const ConditionedContext& ctx,
                                                         RandomStream& rng) {
    auto rows = action_logprobs(policy, ctx);
    std::vector<int> ids;
    ActionLogProb lp;
    for (std::size_t s = 0; s < rows.size(); ++s) {
        const auto& row = rows[s];
        int chosen = 0;
        if (policy.temperature < 1e-12) {
            chosen = static_cast<int>(
                std::max_element(row.begin(), row.end()) - row.begin());
        } else {
            double r = rng.next_double();
            double acc = 0.0;
            chosen = static_cast<int>(row.size()) - 1;
            for (std::size_t c = 0; c < row.size(); ++c) {
                acc += std::exp(row[c]);
                if (r < acc) {
                    chosen = static_cast<int>(c);
                    break;
                }
            }
        }
        ids.push_back(chosen);
        lp.per_subaction.emplace_back(chosen, row[chosen]);
        lp.total += row[chosen];
    }
    return {std::move(ids), std::move(lp)};
}

double action_kl_full(const SoftmaxPolicy& policy, const ConditionedContext& ctx_a,
                      const ConditionedContext& ctx_b) {
    auto rows_a = action_logprobs(policy, ctx_a);
    auto rows_b = action_logprobs(policy, ctx_b);
    double kl = 0.0;
    for (std::size_t s = 0; s < rows_a.size(); ++s) {
        for (std::size_t c = 0; c < rows_a[s].size(); ++c) {
            kl += std::exp(rows_a[s][c]) * (rows_a[s][c] - rows_b[s][c]);
        }
    }
    return std::max(0.0, kl);
}

double action_kl_sampled(const SoftmaxPolicy& policy, const ConditionedContext& ctx_a,
                         const ConditionedContext& ctx_b, const std::vector<int>& action) {
    auto rows_a = action_logprobs(policy, ctx_a);
    auto rows_b = action_logprobs(policy, ctx_b);
    double total = 0.0;
    for (std::size_t s = 0; s < action.size(); ++s) {
        total += rows_a[s][action[s]] - rows_b[s][action[s]];
    }
    return total;
}

std::uint64_t scoring_pass_count() { return g_scoring_passes.load(std::memory_order_relaxed); }
void reset_scoring_pass_count() { g_scoring_passes.store(0, std::memory_order_relaxed); }

MoveRecord decode_action(const std::string& task, const TaskInstance& instance,
                         const std::vector<int>& sub_actions) {
    if (task == "wason") {
        const auto& inst = std::get<wason::WasonInstance>(instance);
        wason::StanceAction act;
        for (std::size_t j = 0; j < sub_actions.size(); ++j) {
            act.stances[inst.faces[j]] = static_cast<wason::Stance>(sub_actions[j]);
        }
        return act;
    }
    weights::PropositionAction act;
    int id = sub_actions.at(0);
    if (id > 0) act.assertion = weights_action_menu()[id - 1];
    return act;
}

std::vector<int> encode_move(const std::string& task, const TaskInstance& instance,
                             const MoveRecord& move) {
    if (task == "wason") {
        const auto& inst = std::get<wason::WasonInstance>(instance);
        const auto& sa = std::get<wason::StanceAction>(move);
        std::vector<int> ids;
        for (char f : inst.faces) {
            auto it = sa.stances.find(f);
            // omitted cards train as explicit uncertainty
            ids.push_back(it == sa.stances.end()
                              ? static_cast<int>(wason::Stance::Unsure)
                              : static_cast<int>(it->second));
        }
        return ids;
    }
    const auto& pa = std::get<weights::PropositionAction>(move);
    if (!pa.assertion) return {0};
    int idx = weights_menu_index(*pa.assertion);
    if (idx < 0) throw IcrError("assertion outside the action menu: " + pa.assertion->text());
    return {idx + 1};
}

CollaboratorAction PolicyCollaborator::respond(const DialogueState& state,
                                               const InterventionAction& intervention,
                                               RandomStream& rng) {
    CollaboratorAction out;
    for (const auto& p : state.participants) {
        ConditionedContext ctx = featurize(state, intervention, p.index, flag_, mask_);
        auto [ids, lp] = sample_action(policy_, ctx, rng);
        out.per_participant[p.index] = decode_action(policy_.task, state.task_instance, ids);
    }
    return out;
}

void save_checkpoint(const SoftmaxPolicy& policy, const std::string& path) {
    json j;
    j["schema_hash"] = policy.schema_hash;
    j["task"] = policy.task;
    j["feature_dim"] = policy.feature_dim;
    j["choices_per_slot"] = policy.choices_per_slot;
    j["temperature"] = policy.temperature;
    j["params"] = policy.params;
    std::ofstream out(path);
    if (!out) throw IcrError("cannot write checkpoint: " + path);
    out << j.dump();
}

SoftmaxPolicy load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CheckpointMissing("checkpoint not found: " + path);
    json j = json::parse(in);
    SoftmaxPolicy p;
    p.task = j.at("task").get<std::string>();
    p.schema_hash = j.at("schema_hash").get<std::uint64_t>();
    const auto& schema = schema_for(p.task);
    if (p.schema_hash != schema.hash) {
        throw IcrError("checkpoint schema hash does not match this build");
    }
    p.feature_dim = j.at("feature_dim").get<int>();
    p.choices_per_slot = j.at("choices_per_slot").get<std::vector<int>>();
    p.temperature = j.at("temperature").get<double>();
    p.params = j.at("params").get<std::vector<std::vector<double>>>();
    return p;
}

}  // namespace icr
